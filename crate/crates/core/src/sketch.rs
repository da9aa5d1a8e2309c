//! Private frequency oracle from a shared ±1 random projection.
//!
//! Every party derives the same `ℓ × |X|` sign matrix from a public seed:
//! row `r` maps `x` to the parity of a degree-3 polynomial with random
//! coefficients over `GF(2^61 - 1)`, which makes the signs of any four
//! distinct elements independent. A client shares its column `φ(x)`, so the
//! aggregators jointly hold shares of `Σ_i φ(x_i)`; each adds per-coordinate
//! discrete Gaussian noise before release. The frequency of `y` is read off
//! as `⟨sketch, φ(y)⟩ / (n ℓ)`.
//!
//! Calibration: one client's column has L2 norm `√ℓ`, so noise of scale
//! `σ_coord = √ℓ σ0` on each coordinate gives `ρ = 1/(2σ0²)` per honest
//! aggregator. The estimator then has two error terms: hashing collisions,
//! shrinking like `1/√ℓ`, and noise, shrinking like `√m σ0 / n`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldModulus, FieldVector};
use crate::noise::{NoiseSpec, Rational};
use crate::par;
use crate::sharing::{self, ShareBundle};

const MERSENNE_61: u64 = (1 << 61) - 1;

/// Largest domain the sign hashes can index injectively.
pub const MAX_DOMAIN_BITS: u32 = 60;

/// Largest domain [`heavy_hitters`] will scan without a candidate list.
pub const MAX_SCAN_BITS: u32 = 24;

fn mul_mod61(a: u64, b: u64) -> u64 {
    let prod = a as u128 * b as u128;
    let lo = (prod as u64) & MERSENNE_61;
    let hi = (prod >> 61) as u64;
    let s = lo + hi;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

fn add_mod61(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

/// Public sketch parameters. All parties must use the same seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SketchParamsRepr", into = "SketchParamsRepr")]
pub struct SketchParams {
    ell: usize,
    domain_bits: u32,
    seed: u64,
    rows: Vec<[u64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct SketchParamsRepr {
    ell: usize,
    domain_bits: u32,
    seed: u64,
}

impl TryFrom<SketchParamsRepr> for SketchParams {
    type Error = Error;

    fn try_from(r: SketchParamsRepr) -> Result<Self> {
        SketchParams::new(r.ell, r.domain_bits, r.seed)
    }
}

impl From<SketchParams> for SketchParamsRepr {
    fn from(p: SketchParams) -> Self {
        SketchParamsRepr {
            ell: p.ell,
            domain_bits: p.domain_bits,
            seed: p.seed,
        }
    }
}

impl SketchParams {
    pub fn new(ell: usize, domain_bits: u32, seed: u64) -> Result<Self> {
        if ell == 0 {
            return Err(Error::Config("sketch length must be at least 1".into()));
        }
        if domain_bits > MAX_DOMAIN_BITS {
            return Err(Error::DomainTooLarge {
                bits: domain_bits,
                what: "the sketch hash family",
            });
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(0x736b_6574_6368);
        let mut coeff = || loop {
            let v = rng.next_u64() >> 3;
            if v < MERSENNE_61 {
                return v;
            }
        };
        let rows = (0..ell)
            .map(|_| [coeff(), coeff(), coeff(), coeff()])
            .collect();
        Ok(SketchParams {
            ell,
            domain_bits,
            seed,
            rows,
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn domain_bits(&self) -> u32 {
        self.domain_bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn check_domain(&self, x: u64) -> Result<()> {
        if self.domain_bits < 64 && x >> self.domain_bits != 0 {
            return Err(Error::OutOfDomain {
                value: x,
                bits: self.domain_bits,
            });
        }
        Ok(())
    }

    #[inline]
    fn sign(&self, row: usize, x: u64) -> i64 {
        let [c0, c1, c2, c3] = self.rows[row];
        let h = add_mod61(
            mul_mod61(add_mod61(mul_mod61(add_mod61(mul_mod61(c3, x), c2), x), c1), x),
            c0,
        );
        if h & 1 == 0 {
            1
        } else {
            -1
        }
    }

    /// Per-coordinate noise scale `√ℓ σ0`, rounded up when `ℓ` is not a square.
    pub fn coordinate_sigma(&self, sigma0: Rational) -> Result<Rational> {
        sigma0.mul_sqrt_ceil(self.ell as u64)
    }
}

/// The column `φ(x) ∈ {±1}^ℓ`.
pub fn sketch_column(x: u64, params: &SketchParams) -> Result<Vec<i64>> {
    params.check_domain(x)?;
    Ok((0..params.ell).map(|r| params.sign(r, x)).collect())
}

/// Shares `φ(x)` (with `-1` encoded as `p - 1`) among `m` aggregators.
pub fn client_encode_sketch<R: RngCore + ?Sized>(
    x: u64,
    params: &SketchParams,
    m: usize,
    modulus: FieldModulus,
    rng: &mut R,
) -> Result<ShareBundle> {
    let column = sketch_column(x, params)?;
    sharing::share_vector(&FieldVector::from_signed(modulus, &column), m, rng)
}

/// One aggregator's noisy share of the sketch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReleasedSketch {
    pub aggregator: usize,
    pub values: FieldVector,
}

/// Adds discrete Gaussian noise of scale `sigma_coord` to each coordinate of
/// an aggregator's share sum. `None` disables noise (tests only).
pub fn aggregator_release_sketch<R: RngCore + ?Sized>(
    aggregator: usize,
    mut sum: FieldVector,
    sigma_coord: Option<Rational>,
    rng: &mut R,
) -> ReleasedSketch {
    if let Some(s) = sigma_coord {
        let noise = NoiseSpec::gaussian(s).sample_vec(sum.len(), rng);
        sum.add_signed(&noise).expect("lengths match");
    }
    ReleasedSketch {
        aggregator,
        values: sum,
    }
}

/// The public signed sketch `centered_lift(Σ_j S_j)`, ready for queries.
///
/// Answering any number of queries reads only this structure.
#[derive(Clone, Debug)]
pub struct CombinedSketch {
    coords: Vec<i64>,
    n: usize,
}

impl CombinedSketch {
    pub fn combine(released: &[ReleasedSketch], m: usize, params: &SketchParams, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut seen = vec![false; m];
        let mut sum: Option<FieldVector> = None;
        for r in released {
            match seen.get_mut(r.aggregator) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(Error::Malformed(format!(
                        "unexpected sketch from aggregator {}",
                        r.aggregator + 1
                    )))
                }
            }
            if r.values.len() != params.ell {
                return Err(Error::LengthMismatch {
                    expected: params.ell,
                    found: r.values.len(),
                });
            }
            match sum.as_mut() {
                Some(acc) => acc.add_assign(&r.values)?,
                None => sum = Some(r.values.clone()),
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::MissingRelease(format!("aggregator {}", j + 1)));
        }
        let sum = sum.ok_or(Error::NoAggregators)?;
        Ok(CombinedSketch {
            coords: sum.centered_lift(),
            n,
        })
    }

    pub fn coords(&self) -> &[i64] {
        &self.coords
    }

    /// `⟨sketch, φ(y)⟩ / (n ℓ)`.
    pub fn estimate(&self, y: u64, params: &SketchParams) -> Result<f64> {
        params.check_domain(y)?;
        let dot: i64 = self
            .coords
            .iter()
            .enumerate()
            .map(|(r, &c)| c * params.sign(r, y))
            .sum();
        Ok(dot as f64 / (self.n as f64 * params.ell as f64))
    }
}

/// Estimated fraction of clients holding `y`.
pub fn estimate_frequency(
    released: &[ReleasedSketch],
    m: usize,
    y: u64,
    params: &SketchParams,
    n: usize,
) -> Result<f64> {
    CombinedSketch::combine(released, m, params, n)?.estimate(y, params)
}

/// Every candidate whose estimate is at least `tau`, highest first (ties by
/// element). Without candidates the whole domain is scanned, which is
/// refused above `2^24` elements.
pub fn heavy_hitters(
    sketch: &CombinedSketch,
    candidates: Option<&[u64]>,
    tau: f64,
    params: &SketchParams,
) -> Result<Vec<(u64, f64)>> {
    let scored: Vec<Result<(u64, f64)>> = match candidates {
        Some(c) => par::map_slice(c, |&y| Ok((y, sketch.estimate(y, params)?))),
        None => {
            if params.domain_bits > MAX_SCAN_BITS {
                return Err(Error::DomainTooLarge {
                    bits: params.domain_bits,
                    what: "a heavy-hitter scan without candidates",
                });
            }
            par::map_range(1usize << params.domain_bits, |y| {
                Ok((y as u64, sketch.estimate(y as u64, params)?))
            })
        }
    };
    let mut hits: Vec<(u64, f64)> = scored
        .into_iter()
        .filter(|r| r.as_ref().map_or(true, |&(_, f)| f >= tau))
        .collect::<Result<_>>()?;
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(hits)
}
