//! m-out-of-m additive secret sharing over `Z_p`.
//!
//! The first `m - 1` shares are independent uniform field elements and the
//! last one is `secret - Σ others`. Any `m - 1` shares are therefore jointly
//! uniform regardless of the secret; all `m` sum back to it.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldModulus, FieldVector, ELEMENT_BYTES};

/// One client's shares, `shares[j]` destined for aggregator `j` only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareBundle {
    modulus: FieldModulus,
    shares: Vec<FieldVector>,
}

impl ShareBundle {
    /// Assembles a bundle from shares received separately.
    pub fn from_shares(shares: Vec<FieldVector>) -> Result<Self> {
        let first = shares.first().ok_or(Error::NoAggregators)?;
        let (modulus, len) = (first.modulus(), first.len());
        for s in &shares {
            if s.modulus() != modulus {
                return Err(Error::ModulusMismatch {
                    left: modulus.value(),
                    right: s.modulus().value(),
                });
            }
            if s.len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    found: s.len(),
                });
            }
        }
        Ok(ShareBundle { modulus, shares })
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    /// Number of aggregators.
    pub fn m(&self) -> usize {
        self.shares.len()
    }

    /// Length of the shared vector (1 for scalars).
    pub fn len(&self) -> usize {
        self.shares[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn share(&self, j: usize) -> &FieldVector {
        &self.shares[j]
    }

    pub fn shares(&self) -> &[FieldVector] {
        &self.shares
    }

    pub fn into_shares(self) -> Vec<FieldVector> {
        self.shares
    }
}

/// Shares a scalar among `m` aggregators.
pub fn share<R: RngCore + ?Sized>(
    secret: FieldElement,
    m: usize,
    rng: &mut R,
) -> Result<ShareBundle> {
    share_vector(&FieldVector::from_elements(&[secret])?, m, rng)
}

/// Shares each coordinate of `secret` independently.
pub fn share_vector<R: RngCore + ?Sized>(
    secret: &FieldVector,
    m: usize,
    rng: &mut R,
) -> Result<ShareBundle> {
    if m == 0 {
        return Err(Error::NoAggregators);
    }
    if secret.is_empty() {
        return Err(Error::EmptyVector);
    }
    let p = secret.modulus();
    let mut last = secret.values().to_vec();
    let mut shares = Vec::with_capacity(m);
    for _ in 1..m {
        let mask: Vec<u64> = (0..secret.len()).map(|_| p.sample_raw(rng)).collect();
        for (l, &r) in last.iter_mut().zip(&mask) {
            *l = p.sub_raw(*l, r);
        }
        shares.push(FieldVector::from_raw_unchecked(p, mask));
    }
    shares.push(FieldVector::from_raw_unchecked(p, last));
    Ok(ShareBundle { modulus: p, shares })
}

/// Sum of all shares in the bundle.
pub fn reconstruct(bundle: &ShareBundle) -> Result<FieldVector> {
    reconstruct_from(bundle.shares(), bundle.m())
}

/// Sum of `shares`, which must hold exactly `m` vectors of equal shape.
pub fn reconstruct_from(shares: &[FieldVector], m: usize) -> Result<FieldVector> {
    if shares.len() != m || m == 0 {
        return Err(Error::MissingShare {
            expected: m,
            found: shares.len(),
        });
    }
    let mut acc = shares[0].clone();
    for s in &shares[1..] {
        acc.add_assign(s)?;
    }
    Ok(acc)
}

pub fn reconstruct_scalar(bundle: &ShareBundle) -> Result<FieldElement> {
    let v = reconstruct(bundle)?;
    if v.len() != 1 {
        return Err(Error::LengthMismatch {
            expected: 1,
            found: v.len(),
        });
    }
    Ok(v.get(0).expect("length checked"))
}

/// A way for a client to split a vector into per-aggregator shares.
///
/// The simulator is parameterised over this so that tests can swap in a
/// broken scheme and confirm the privacy checks catch it.
pub trait Sharer: Send + Sync {
    fn share_vector(
        &self,
        secret: &FieldVector,
        m: usize,
        rng: &mut dyn RngCore,
    ) -> Result<ShareBundle>;
}

/// The honest additive scheme.
#[derive(Clone, Copy, Debug, Default)]
pub struct AdditiveSharer;

impl Sharer for AdditiveSharer {
    fn share_vector(
        &self,
        secret: &FieldVector,
        m: usize,
        rng: &mut dyn RngCore,
    ) -> Result<ShareBundle> {
        share_vector(secret, m, rng)
    }
}

/// An aggregator's running modular sum of per-client share vectors.
///
/// Absorption order is irrelevant and partial accumulators over disjoint
/// client sets can be merged, so shares may be folded concurrently.
#[derive(Clone, Debug)]
pub struct Accumulator {
    modulus: FieldModulus,
    sum: Vec<u64>,
    seen: Vec<bool>,
    count: usize,
}

impl Accumulator {
    /// Expects exactly one length-`len` share from each of `n` clients.
    pub fn new(modulus: FieldModulus, n: usize, len: usize) -> Self {
        Accumulator {
            modulus,
            sum: vec![0; len],
            seen: vec![false; n],
            count: 0,
        }
    }

    pub fn absorb(&mut self, client: usize, share: &FieldVector) -> Result<()> {
        let n = self.seen.len();
        if client >= n {
            return Err(Error::ClientOutOfRange { index: client, n });
        }
        if share.modulus() != self.modulus {
            return Err(Error::ModulusMismatch {
                left: self.modulus.value(),
                right: share.modulus().value(),
            });
        }
        if share.len() != self.sum.len() {
            return Err(Error::LengthMismatch {
                expected: self.sum.len(),
                found: share.len(),
            });
        }
        if self.seen[client] {
            return Err(Error::DuplicateClient(client));
        }
        self.seen[client] = true;
        self.count += 1;
        let p = self.modulus;
        for (a, &b) in self.sum.iter_mut().zip(share.values()) {
            *a = p.add_raw(*a, b);
        }
        Ok(())
    }

    /// Combines two partial sums over disjoint client sets.
    pub fn merge(mut self, other: Accumulator) -> Result<Self> {
        if self.seen.len() != other.seen.len() || self.sum.len() != other.sum.len() {
            return Err(Error::LengthMismatch {
                expected: self.sum.len(),
                found: other.sum.len(),
            });
        }
        for (i, (a, b)) in self.seen.iter_mut().zip(&other.seen).enumerate() {
            if *a && *b {
                return Err(Error::DuplicateClient(i));
            }
            *a |= *b;
        }
        self.count += other.count;
        let p = self.modulus;
        for (a, &b) in self.sum.iter_mut().zip(&other.sum) {
            *a = p.add_raw(*a, b);
        }
        Ok(self)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// The final sum; fails if any client is missing.
    pub fn finish(self) -> Result<FieldVector> {
        if let Some(missing) = self.seen.iter().position(|s| !s) {
            return Err(Error::MissingClient(missing));
        }
        Ok(FieldVector::from_raw_unchecked(self.modulus, self.sum))
    }
}

/// Length of the share frame header: protocol id, sender id, vector length.
pub const FRAME_HEADER_BYTES: usize = 1 + 4 + 4;

/// Wire frame for a vector of field elements sent by one party.
///
/// Layout: `protocol: u8 | sender: u32 LE | len: u32 LE | len × u64 LE`.
/// The modulus is a session parameter and is not repeated per frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareFrame {
    pub protocol: u8,
    pub sender: u32,
    pub values: FieldVector,
}

impl ShareFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + ELEMENT_BYTES * self.values.len());
        out.push(self.protocol);
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for &v in self.values.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], modulus: FieldModulus) -> Result<Self> {
        if bytes.len() < FRAME_HEADER_BYTES {
            return Err(Error::Malformed(format!(
                "share frame of {} bytes is shorter than its header",
                bytes.len()
            )));
        }
        let protocol = bytes[0];
        let sender = u32::from_le_bytes(bytes[1..5].try_into().expect("4 bytes"));
        let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body = &bytes[FRAME_HEADER_BYTES..];
        if body.len() != len * ELEMENT_BYTES {
            return Err(Error::Malformed(format!(
                "share frame declares {len} elements but carries {} bytes",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(ELEMENT_BYTES)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let values = FieldVector::from_values(modulus, values)?;
        Ok(ShareFrame {
            protocol,
            sender,
            values,
        })
    }
}
