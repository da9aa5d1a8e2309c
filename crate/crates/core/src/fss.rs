//! Two-party distributed point functions and the protocols built on them.
//!
//! [`dpf_gen`] splits the point function `f(x) = β·[x = α]` over a domain of
//! `2^depth` points into two keys of `O(λ · depth)` bits using the GGM-tree
//! construction of Boyle, Gilboa and Ishai ("Function Secret Sharing:
//! Improvements and Extensions", CCS 2016). Each key alone is pseudorandom;
//! evaluations of the two keys at any `x` are additive shares of `f(x)` in
//! `Z_p`. The tree is walked most-significant bit first, so a full-domain
//! evaluation emits leaves in index order.
//!
//! Built on top:
//! * threshold queries: clients send keys for `α = x_i, β = 1`; aggregators
//!   release noisy full-domain histograms; prefix sums answer `count(x ≤ t)`.
//! * sampled queries: each client answers one of `k` queries picked at
//!   random, hiding which one inside a DPF over `[k]`.
//!
//! These protocols are defined for exactly two aggregators.

use std::sync::OnceLock;

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::counting::{CountingQuery, Datum};
use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldModulus, FieldVector, ELEMENT_BYTES};
use crate::noise::{NoiseSpec, Rational};
use crate::par;

/// Security parameter in bits; the only supported value.
pub const LAMBDA: usize = 128;

/// Largest tree depth accepted by [`dpf_gen`].
pub const MAX_DEPTH: u32 = 64;

/// Largest depth for full-domain evaluation.
pub const MAX_FULL_DEPTH: u32 = 24;

pub const KEY_VERSION: u8 = 1;

const SEED_BYTES: usize = LAMBDA / 8;
const CW_BYTES: usize = SEED_BYTES + 1;
const KEY_HEADER_BYTES: usize = 3;

// Subtrees at or above this height are split across threads.
const PAR_HEIGHT: u32 = 10;

/// Fixed-key AES in Matyas-Meyer-Oseas mode, `s ↦ AES_k(s) ⊕ s`, keyed
/// three ways: left child, right child, and leaf-to-field conversion.
struct Prg {
    left: Aes128,
    right: Aes128,
    convert: Aes128,
}

fn prg() -> &'static Prg {
    static PRG: OnceLock<Prg> = OnceLock::new();
    PRG.get_or_init(|| {
        let key = |tag: u8| {
            let mut k = *b"mcdp-dpf-prg-key";
            k[15] ^= tag;
            Aes128::new(&GenericArray::from(k))
        };
        Prg {
            left: key(1),
            right: key(2),
            convert: key(3),
        }
    })
}

#[inline]
fn mmo(cipher: &Aes128, s: u128) -> u128 {
    let mut block = GenericArray::from(s.to_le_bytes());
    cipher.encrypt_block(&mut block);
    u128::from_le_bytes(block.into()) ^ s
}

/// Child seeds with their control bits (taken from, then cleared in, the
/// low bit of each half).
#[derive(Clone, Copy)]
struct Children {
    seed_left: u128,
    t_left: bool,
    seed_right: u128,
    t_right: bool,
}

#[inline]
fn expand(s: u128) -> Children {
    let p = prg();
    let l = mmo(&p.left, s);
    let r = mmo(&p.right, s);
    Children {
        seed_left: l & !1,
        t_left: l & 1 == 1,
        seed_right: r & !1,
        t_right: r & 1 == 1,
    }
}

#[inline]
fn convert(s: u128, modulus: FieldModulus) -> u64 {
    // 128 → 62-bit reduction; the bias is below 2^-65.
    (mmo(&prg().convert, s) % modulus.value() as u128) as u64
}

/// Per-level correction: a seed and one control bit per child.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorrectionWord {
    pub seed: u128,
    pub t_left: bool,
    pub t_right: bool,
}

/// One party's key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DpfKey {
    party: u8,
    depth: u32,
    root: u128,
    corrections: Vec<CorrectionWord>,
    final_correction: FieldElement,
}

/// `f(x) = beta` at `x = alpha`, zero elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PointFunction {
    pub alpha: u64,
    pub beta: FieldElement,
}

fn check_lambda(lambda: usize) -> Result<()> {
    if lambda != LAMBDA {
        return Err(Error::Config(format!(
            "security parameter {lambda} unsupported; only {LAMBDA} is implemented"
        )));
    }
    Ok(())
}

fn random_seed<R: RngCore + ?Sized>(rng: &mut R) -> u128 {
    (rng.next_u64() as u128) << 64 | rng.next_u64() as u128
}

/// Generates the two keys of a point function over `2^depth` points.
pub fn dpf_gen<R: RngCore + ?Sized>(
    f: PointFunction,
    lambda: usize,
    depth: u32,
    rng: &mut R,
) -> Result<(DpfKey, DpfKey)> {
    check_lambda(lambda)?;
    if depth > MAX_DEPTH {
        return Err(Error::DomainTooLarge {
            bits: depth,
            what: "a point function",
        });
    }
    if depth < 64 && f.alpha >> depth != 0 {
        return Err(Error::OutOfDomain {
            value: f.alpha,
            bits: depth,
        });
    }
    let modulus = f.beta.modulus();
    let roots = [random_seed(rng), random_seed(rng)];
    let mut seeds = roots;
    let mut ts = [false, true];
    let mut corrections = Vec::with_capacity(depth as usize);
    for level in 0..depth {
        let bit = (f.alpha >> (depth - 1 - level)) & 1 == 1;
        let c = [expand(seeds[0]), expand(seeds[1])];
        let lose = |c: &Children| if bit { c.seed_left } else { c.seed_right };
        let cw = CorrectionWord {
            seed: lose(&c[0]) ^ lose(&c[1]),
            t_left: c[0].t_left ^ c[1].t_left ^ bit ^ true,
            t_right: c[0].t_right ^ c[1].t_right ^ bit,
        };
        let t_keep_cw = if bit { cw.t_right } else { cw.t_left };
        for b in 0..2 {
            let (s_keep, t_keep) = if bit {
                (c[b].seed_right, c[b].t_right)
            } else {
                (c[b].seed_left, c[b].t_left)
            };
            seeds[b] = if ts[b] { s_keep ^ cw.seed } else { s_keep };
            ts[b] = t_keep ^ (ts[b] & t_keep_cw);
        }
        corrections.push(cw);
    }
    let diff = f
        .beta
        .sub(modulus.from_u128(convert(seeds[0], modulus) as u128))?
        .add(modulus.from_u128(convert(seeds[1], modulus) as u128))?;
    let final_correction = if ts[1] { diff.neg() } else { diff };
    let key = |party: u8| DpfKey {
        party,
        depth,
        root: roots[party as usize],
        corrections: corrections.clone(),
        final_correction,
    };
    Ok((key(0), key(1)))
}

impl DpfKey {
    pub fn party(&self) -> u8 {
        self.party
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn modulus(&self) -> FieldModulus {
        self.final_correction.modulus()
    }

    pub fn corrections(&self) -> &[CorrectionWord] {
        &self.corrections
    }

    #[inline]
    fn step(&self, level: usize, s: u128, t: bool) -> Children {
        let mut c = expand(s);
        if t {
            let cw = &self.corrections[level];
            c.seed_left ^= cw.seed;
            c.seed_right ^= cw.seed;
            c.t_left ^= cw.t_left;
            c.t_right ^= cw.t_right;
        }
        c
    }

    #[inline]
    fn leaf(&self, s: u128, t: bool) -> u64 {
        let p = self.modulus();
        let mut v = convert(s, p);
        if t {
            v = p.add_raw(v, self.final_correction.value());
        }
        if self.party == 1 {
            v = p.neg_raw(v);
        }
        v
    }

    fn domain_size(&self) -> Result<usize> {
        if self.depth > MAX_FULL_DEPTH {
            return Err(Error::DomainTooLarge {
                bits: self.depth,
                what: "full-domain evaluation",
            });
        }
        Ok(1usize << self.depth)
    }

    fn fill(&self, level: u32, s: u128, t: bool, out: &mut [u64]) {
        if level == self.depth {
            out[0] = self.leaf(s, t);
            return;
        }
        let c = self.step(level as usize, s, t);
        let (lo, hi) = out.split_at_mut(out.len() / 2);
        if self.depth - level >= PAR_HEIGHT {
            par::join(
                || self.fill(level + 1, c.seed_left, c.t_left, lo),
                || self.fill(level + 1, c.seed_right, c.t_right, hi),
            );
        } else {
            self.fill(level + 1, c.seed_left, c.t_left, lo);
            self.fill(level + 1, c.seed_right, c.t_right, hi);
        }
    }

    /// Size of the serialized key.
    pub fn encoded_len(&self) -> usize {
        key_size_bytes(self.depth)
    }

    /// `version | party | depth | root (16) | depth × (seed (16) | t-bits) | final (8)`,
    /// integers little-endian; the t-bits byte holds `t_left` in bit 0 and
    /// `t_right` in bit 1.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(KEY_VERSION);
        out.push(self.party);
        out.push(self.depth as u8);
        out.extend_from_slice(&self.root.to_le_bytes());
        for cw in &self.corrections {
            out.extend_from_slice(&cw.seed.to_le_bytes());
            out.push(cw.t_left as u8 | (cw.t_right as u8) << 1);
        }
        out.extend_from_slice(&self.final_correction.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], modulus: FieldModulus) -> Result<Self> {
        let bad = |why: &str| Error::Malformed(format!("DPF key: {why}"));
        if bytes.len() < KEY_HEADER_BYTES {
            return Err(bad("truncated header"));
        }
        if bytes[0] != KEY_VERSION {
            return Err(bad("unknown version"));
        }
        let party = bytes[1];
        if party > 1 {
            return Err(bad("party bit must be 0 or 1"));
        }
        let depth = bytes[2] as u32;
        if depth > MAX_DEPTH {
            return Err(bad("depth too large"));
        }
        if bytes.len() != key_size_bytes(depth) {
            return Err(bad("length does not match depth"));
        }
        let seed_at = |at: usize| u128::from_le_bytes(bytes[at..at + SEED_BYTES].try_into().unwrap());
        let root = seed_at(KEY_HEADER_BYTES);
        let mut at = KEY_HEADER_BYTES + SEED_BYTES;
        let mut corrections = Vec::with_capacity(depth as usize);
        for _ in 0..depth {
            let bits = bytes[at + SEED_BYTES];
            if bits > 3 {
                return Err(bad("control byte out of range"));
            }
            corrections.push(CorrectionWord {
                seed: seed_at(at),
                t_left: bits & 1 == 1,
                t_right: bits & 2 == 2,
            });
            at += CW_BYTES;
        }
        let final_correction =
            FieldElement::from_le_bytes(bytes[at..at + ELEMENT_BYTES].try_into().unwrap(), modulus)?;
        Ok(DpfKey {
            party,
            depth,
            root,
            corrections,
            final_correction,
        })
    }
}

/// Serialized key size in bytes for a tree of the given depth.
pub const fn key_size_bytes(depth: u32) -> usize {
    KEY_HEADER_BYTES + SEED_BYTES + CW_BYTES * depth as usize + ELEMENT_BYTES
}

/// This party's additive share of `f(x)`.
pub fn dpf_eval(key: &DpfKey, x: u64) -> Result<FieldElement> {
    if key.depth < 64 && x >> key.depth != 0 {
        return Err(Error::OutOfDomain {
            value: x,
            bits: key.depth,
        });
    }
    let (mut s, mut t) = (key.root, key.party == 1);
    for level in 0..key.depth {
        let c = key.step(level as usize, s, t);
        if (x >> (key.depth - 1 - level)) & 1 == 1 {
            (s, t) = (c.seed_right, c.t_right);
        } else {
            (s, t) = (c.seed_left, c.t_left);
        }
    }
    key.modulus().element(key.leaf(s, t))
}

/// Shares at every domain point in one tree traversal (`O(2^depth)` PRG calls).
pub fn dpf_eval_full(key: &DpfKey) -> Result<FieldVector> {
    let size = key.domain_size()?;
    let mut out = vec![0u64; size];
    key.fill(0, key.root, key.party == 1, &mut out);
    Ok(FieldVector::from_raw_unchecked(key.modulus(), out))
}

/// Sums full-domain evaluations of many keys of one party, keeping the
/// first `len` coordinates.
pub fn aggregate_keys(keys: &[DpfKey], len: usize, modulus: FieldModulus) -> Result<FieldVector> {
    for k in keys {
        if k.modulus() != modulus {
            return Err(Error::ModulusMismatch {
                left: modulus.value(),
                right: k.modulus().value(),
            });
        }
        if k.domain_size()? < len {
            return Err(Error::LengthMismatch {
                expected: len,
                found: k.domain_size()?,
            });
        }
    }
    let sum = par::fold_range(
        keys.len(),
        || Ok(vec![0u64; len]),
        |acc: Result<Vec<u64>>, i| {
            let mut acc = acc?;
            let eval = dpf_eval_full(&keys[i])?;
            for (a, &v) in acc.iter_mut().zip(eval.values()) {
                *a = modulus.add_raw(*a, v);
            }
            Ok(acc)
        },
        |a, b| {
            let (mut a, b) = (a?, b?);
            for (x, &y) in a.iter_mut().zip(&b) {
                *x = modulus.add_raw(*x, y);
            }
            Ok(a)
        },
    )?;
    Ok(FieldVector::from_raw_unchecked(modulus, sum))
}

/// One aggregator's noisy share of a histogram over the domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReleasedHistogram {
    pub aggregator: usize,
    pub values: FieldVector,
}

/// Adds per-coordinate discrete Gaussian noise; `None` disables it (tests only).
pub fn release_histogram<R: RngCore + ?Sized>(
    aggregator: usize,
    mut sum: FieldVector,
    sigma: Option<Rational>,
    rng: &mut R,
) -> ReleasedHistogram {
    if let Some(s) = sigma {
        let noise = NoiseSpec::gaussian(s).sample_vec(sum.len(), rng);
        sum.add_signed(&noise).expect("lengths match");
    }
    ReleasedHistogram {
        aggregator,
        values: sum,
    }
}

fn reconstruct_releases(releases: &[ReleasedHistogram]) -> Result<Vec<i64>> {
    let mut slots: [Option<&FieldVector>; 2] = [None, None];
    for r in releases {
        match slots.get_mut(r.aggregator) {
            Some(slot @ None) => *slot = Some(&r.values),
            _ => {
                return Err(Error::Malformed(format!(
                    "unexpected release from aggregator {}",
                    r.aggregator + 1
                )))
            }
        }
    }
    let [Some(a), Some(b)] = slots else {
        let j = slots.iter().position(Option::is_none).unwrap_or(0);
        return Err(Error::MissingRelease(format!("aggregator {}", j + 1)));
    };
    let mut sum = a.clone();
    sum.add_assign(b)?;
    Ok(sum.centered_lift())
}

/// Noisy histogram and its running sums.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub histogram: Vec<i64>,
    pub cumulative: Vec<i64>,
}

impl ThresholdCounts {
    /// Noisy `#{i : x_i ≤ t}`; thresholds past the domain saturate.
    pub fn count_le(&self, t: u64) -> i64 {
        let last = self.cumulative.len() - 1;
        self.cumulative[(t.min(last as u64)) as usize]
    }
}

/// Client side of a threshold query: keys for `α = x, β = 1`.
pub fn threshold_client_encode<R: RngCore + ?Sized>(
    x: Datum,
    domain_bits: u32,
    modulus: FieldModulus,
    rng: &mut R,
) -> Result<(DpfKey, DpfKey)> {
    let f = PointFunction {
        alpha: x,
        beta: modulus.element(1)?,
    };
    dpf_gen(f, LAMBDA, domain_bits, rng)
}

/// Reconstructs the histogram from both releases and prefix-sums it.
pub fn threshold_combine(releases: &[ReleasedHistogram]) -> Result<ThresholdCounts> {
    let histogram = reconstruct_releases(releases)?;
    let cumulative = histogram
        .iter()
        .scan(0i64, |acc, &h| {
            *acc += h;
            Some(*acc)
        })
        .collect();
    Ok(ThresholdCounts {
        histogram,
        cumulative,
    })
}

/// In-process threshold pipeline: both aggregators aggregate their keys,
/// add noise drawn from `rng`, and the releases are combined.
pub fn threshold_counts<R: RngCore + ?Sized>(
    keys: &[(DpfKey, DpfKey)],
    sigma: Option<Rational>,
    rng: &mut R,
) -> Result<ThresholdCounts> {
    let first = keys.first().ok_or(Error::EmptyDataset)?;
    let (depth, modulus) = (first.0.depth(), first.0.modulus());
    let len = 1usize << depth.min(MAX_FULL_DEPTH);
    let k0: Vec<DpfKey> = keys.iter().map(|k| k.0.clone()).collect();
    let k1: Vec<DpfKey> = keys.iter().map(|k| k.1.clone()).collect();
    if k0.iter().chain(&k1).any(|k| k.depth() != depth) {
        return Err(Error::Malformed("keys of mixed depth".into()));
    }
    let (s0, s1) = par::join(
        || aggregate_keys(&k0, len, modulus),
        || aggregate_keys(&k1, len, modulus),
    );
    let releases = [
        release_histogram(0, s0?, sigma, rng),
        release_histogram(1, s1?, sigma, rng),
    ];
    threshold_combine(&releases)
}

/// Tree depth for a DPF over `k` query slots.
pub fn sampled_depth(k: usize) -> u32 {
    (k.max(1) as u64).next_power_of_two().trailing_zeros()
}

/// Picks a query uniformly at random and hides its answer in a DPF over `[k]`.
pub fn sampled_query_encode<R: RngCore + ?Sized>(
    x: Datum,
    queries: &[CountingQuery],
    lambda: usize,
    modulus: FieldModulus,
    rng: &mut R,
) -> Result<(DpfKey, DpfKey)> {
    let k = queries.len();
    if k == 0 {
        return Err(Error::NoQueries);
    }
    let chosen = crate::noise::uniform_index(k, rng);
    let f = PointFunction {
        alpha: chosen as u64,
        beta: modulus.element(queries[chosen].eval(x))?,
    };
    dpf_gen(f, lambda, sampled_depth(k), rng)
}

/// Per-query estimates from the sampled protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledEstimates {
    /// `k · (noisy count at ℓ) / n`, unbiased for the mean of `q_ℓ`.
    pub estimates: Vec<f64>,
    /// Worst-case sampling standard deviation, `√((k - 1)/n)`.
    pub sampling_std_bound: f64,
}

pub fn sampled_query_combine(
    releases: &[ReleasedHistogram],
    n: usize,
    k: usize,
) -> Result<SampledEstimates> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::NoQueries);
    }
    let counts = reconstruct_releases(releases)?;
    if counts.len() < k {
        return Err(Error::LengthMismatch {
            expected: k,
            found: counts.len(),
        });
    }
    let scale = k as f64 / n as f64;
    Ok(SampledEstimates {
        estimates: counts[..k].iter().map(|&c| c as f64 * scale).collect(),
        sampling_std_bound: ((k - 1) as f64 / n as f64).sqrt(),
    })
}
