//! Private counting queries over additive shares.
//!
//! Each client shares the bit `q(x)`; each aggregator sums its shares and
//! publishes the sum plus its own discrete Gaussian noise; anyone adds the
//! `m` releases, lifts the result to a signed integer and divides by `n`.
//! The estimate has variance `m σ² / n²`, while the privacy guarantee rests
//! on the noise of a single honest aggregator (`ρ = 1/2σ²`).

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldModulus, FieldVector};
use crate::noise::{NoiseSpec, Rational};
use crate::sharing::{self, Accumulator, ShareBundle};

/// A client's private value: one element of the data universe.
pub type Datum = u64;

/// A boolean predicate over the data universe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predicate {
    All,
    Nothing,
    Eq(u64),
    Ne(u64),
    Lt(u64),
    Le(u64),
    Gt(u64),
    Ge(u64),
    /// Inclusive range.
    Range(u64, u64),
    /// Bit `i` of the datum is set.
    Bit(u32),
    Odd,
    Even,
}

impl Predicate {
    pub fn eval(self, x: Datum) -> bool {
        match self {
            Predicate::All => true,
            Predicate::Nothing => false,
            Predicate::Eq(v) => x == v,
            Predicate::Ne(v) => x != v,
            Predicate::Lt(v) => x < v,
            Predicate::Le(v) => x <= v,
            Predicate::Gt(v) => x > v,
            Predicate::Ge(v) => x >= v,
            Predicate::Range(lo, hi) => lo <= x && x <= hi,
            Predicate::Bit(i) => i < 64 && (x >> i) & 1 == 1,
            Predicate::Odd => x % 2 == 1,
            Predicate::Even => x.is_multiple_of(2),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::All => write!(f, "all"),
            Predicate::Nothing => write!(f, "none"),
            Predicate::Eq(v) => write!(f, "eq:{v}"),
            Predicate::Ne(v) => write!(f, "ne:{v}"),
            Predicate::Lt(v) => write!(f, "lt:{v}"),
            Predicate::Le(v) => write!(f, "le:{v}"),
            Predicate::Gt(v) => write!(f, "gt:{v}"),
            Predicate::Ge(v) => write!(f, "ge:{v}"),
            Predicate::Range(a, b) => write!(f, "range:{a}:{b}"),
            Predicate::Bit(i) => write!(f, "bit:{i}"),
            Predicate::Odd => write!(f, "odd"),
            Predicate::Even => write!(f, "even"),
        }
    }
}

impl FromStr for Predicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown predicate {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<u64> {
            parts
                .get(i)
                .and_then(|p| p.trim().parse().ok())
                .ok_or_else(bad)
        };
        let p = match (parts[0], parts.len()) {
            ("all", 1) => Predicate::All,
            ("none", 1) => Predicate::Nothing,
            ("odd", 1) => Predicate::Odd,
            ("even", 1) => Predicate::Even,
            ("eq", 2) => Predicate::Eq(num(1)?),
            ("ne", 2) => Predicate::Ne(num(1)?),
            ("lt", 2) => Predicate::Lt(num(1)?),
            ("le", 2) => Predicate::Le(num(1)?),
            ("gt", 2) => Predicate::Gt(num(1)?),
            ("ge", 2) => Predicate::Ge(num(1)?),
            ("range", 3) => Predicate::Range(num(1)?, num(2)?),
            ("bit", 2) => Predicate::Bit(u32::try_from(num(1)?).map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        Ok(p)
    }
}

impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A named 0/1 query `q : X → {0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingQuery {
    pub id: String,
    pub predicate: Predicate,
}

impl CountingQuery {
    pub fn new(id: impl Into<String>, predicate: Predicate) -> Self {
        CountingQuery {
            id: id.into(),
            predicate,
        }
    }

    pub fn eval(&self, x: Datum) -> u64 {
        self.predicate.eval(x) as u64
    }

    /// Parses `"id,predicate"` or a bare predicate (which then doubles as the id).
    pub fn parse_line(line: &str) -> Result<Self> {
        match line.split_once(',') {
            Some((id, pred)) => Ok(CountingQuery::new(id.trim(), pred.parse()?)),
            None => Ok(CountingQuery::new(line.trim(), line.parse()?)),
        }
    }
}

/// Aggregator `aggregator`'s published value `V^j = v^j + η_j mod p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoisyAggregate {
    pub aggregator: usize,
    pub value: FieldElement,
}

/// Shares `q(x)` among `m` aggregators.
pub fn client_encode<R: RngCore + ?Sized>(
    x: Datum,
    query: &CountingQuery,
    m: usize,
    modulus: FieldModulus,
    rng: &mut R,
) -> Result<ShareBundle> {
    let bit = modulus.element(query.eval(x))?;
    sharing::share(bit, m, rng)
}

/// Sums one share per client; `shares` pairs a 0-based client index with
/// the share that client sent.
pub fn aggregator_accumulate(
    shares: &[(usize, FieldElement)],
    n: usize,
    modulus: FieldModulus,
) -> Result<FieldElement> {
    let mut acc = Accumulator::new(modulus, n, 1);
    for &(client, share) in shares {
        acc.absorb(client, &FieldVector::from_elements(&[share])?)?;
    }
    let sum = acc.finish()?;
    Ok(sum.get(0).expect("length 1"))
}

/// Adds discrete Gaussian noise of scale `sigma` to an aggregate. `None`
/// disables noise and exists for correctness tests only.
pub fn aggregator_release<R: RngCore + ?Sized>(
    aggregator: usize,
    v: FieldElement,
    sigma: Option<Rational>,
    rng: &mut R,
) -> NoisyAggregate {
    let value = match sigma {
        Some(s) => {
            let eta = NoiseSpec::gaussian(s).sample(rng);
            v.add(v.modulus().from_i64(eta)).expect("same modulus")
        }
        None => v,
    };
    NoisyAggregate { aggregator, value }
}

/// `centered_lift(Σ_j V^j) / n`. Requires exactly one release from each of
/// the `m` aggregators.
pub fn combine(
    aggregates: &[NoisyAggregate],
    m: usize,
    n: usize,
    modulus: FieldModulus,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut seen = vec![false; m];
    let mut total = modulus.zero();
    for a in aggregates {
        match seen.get_mut(a.aggregator) {
            Some(s) if !*s => *s = true,
            _ => {
                return Err(Error::Malformed(format!(
                    "unexpected release from aggregator {}",
                    a.aggregator + 1
                )))
            }
        }
        total = total.add(a.value)?;
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::MissingRelease(format!("aggregator {}", j + 1)));
    }
    Ok(total.centered_lift() as f64 / n as f64)
}

/// Standard deviation of the combined estimate, `√m σ / n`.
pub fn predicted_std(m: usize, sigma: f64, n: usize) -> f64 {
    (m as f64).sqrt() * sigma / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn p101() -> FieldModulus {
        FieldModulus::new(101).unwrap()
    }

    #[test]
    fn predicate_parsing() {
        for s in ["all", "none", "eq:5", "range:2:7", "bit:3", "odd", "ge:10"] {
            assert_eq!(s.parse::<Predicate>().unwrap().to_string(), s);
        }
        assert!("range:1".parse::<Predicate>().is_err());
        assert!("foo:1".parse::<Predicate>().is_err());
        assert!(Predicate::Range(2, 7).eval(7));
        assert!(!Predicate::Bit(70).eval(u64::MAX));
        let q = CountingQuery::parse_line("big, gt:9").unwrap();
        assert_eq!(q.id, "big");
        assert_eq!(q.eval(10), 1);
        assert_eq!(CountingQuery::parse_line("lt:3").unwrap().id, "lt:3");
    }

    #[test]
    fn encode_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let zero = CountingQuery::new("z", Predicate::Nothing);
        let one = CountingQuery::new("o", Predicate::All);
        let b = client_encode(5, &zero, 2, p101(), &mut rng).unwrap();
        assert_eq!(sharing::reconstruct_scalar(&b).unwrap().value(), 0);
        let b = client_encode(5, &one, 1, p101(), &mut rng).unwrap();
        assert_eq!(b.share(0).values(), &[1]);
    }

    #[test]
    fn encode_regression_vector() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let one = CountingQuery::new("o", Predicate::All);
        let b = client_encode(0, &one, 3, p101(), &mut rng).unwrap();
        let got: Vec<u64> = b.shares().iter().map(|s| s.values()[0]).collect();
        assert_eq!(got, [65, 8, 29]);
        assert_eq!(got.iter().sum::<u64>() % 101, 1);
    }

    #[test]
    fn accumulate_examples() {
        let m = p101();
        let e = |v| m.element(v).unwrap();
        assert_eq!(
            aggregator_accumulate(&[(0, e(0)), (1, e(0))], 2, m).unwrap().value(),
            0
        );
        let shares = [(0, e(40)), (1, e(25)), (2, e(37))];
        assert_eq!(aggregator_accumulate(&shares, 3, m).unwrap().value(), 1);
        assert_eq!(
            aggregator_accumulate(&shares[..2], 3, m).unwrap_err(),
            Error::MissingClient(2)
        );
        let dup = [(0, e(1)), (0, e(1)), (2, e(1))];
        assert_eq!(
            aggregator_accumulate(&dup, 3, m).unwrap_err(),
            Error::DuplicateClient(0)
        );
    }

    #[test]
    fn release_examples() {
        let m = p101();
        let v = m.element(50).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let tiny = Rational::new(1, 1000).unwrap();
        assert_eq!(aggregator_release(0, v, Some(tiny), &mut rng).value, v);
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let ten = Rational::integer(10).unwrap();
        let out = aggregator_release(0, v, Some(ten), &mut rng);
        assert_eq!(out.value.value(), 53);
        assert_eq!(aggregator_release(1, v, None, &mut rng).value, v);
    }

    #[test]
    fn combine_examples() {
        let m = p101();
        let agg = |j, v| NoisyAggregate {
            aggregator: j,
            value: m.element(v).unwrap(),
        };
        assert!((combine(&[agg(0, 7), agg(1, 95)], 2, 10, m).unwrap() - 0.1).abs() < 1e-15);
        assert!((combine(&[agg(0, 3), agg(1, 97)], 2, 10, m).unwrap() + 0.1).abs() < 1e-15);
        assert!(matches!(
            combine(&[agg(0, 3)], 2, 10, m),
            Err(Error::MissingRelease(_))
        ));
        assert!(combine(&[agg(0, 3), agg(0, 3)], 2, 10, m).is_err());
    }

    #[test]
    fn noise_free_pipeline_is_exact() {
        // The output depends on the data only through the true count, so
        // covering every (n, count) pair with n ≤ 32 over p = 127 is exhaustive.
        let m = FieldModulus::new(127).unwrap();
        let q = CountingQuery::new("odd", Predicate::Odd);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for n in 1..=32usize {
            for ones in 0..=n {
                let aggs = 1 + (n + ones) % 4;
                let data: Vec<u64> = (0..n).map(|i| ((i * 7) % n < ones) as u64).collect();
                let bundles: Vec<ShareBundle> = data
                    .iter()
                    .map(|&x| client_encode(x, &q, aggs, m, &mut rng).unwrap())
                    .collect();
                let releases: Vec<NoisyAggregate> = (0..aggs)
                    .map(|j| {
                        let shares: Vec<_> = bundles
                            .iter()
                            .enumerate()
                            .map(|(i, b)| (i, b.share(j).get(0).unwrap()))
                            .collect();
                        let v = aggregator_accumulate(&shares, n, m).unwrap();
                        aggregator_release(j, v, None, &mut rng)
                    })
                    .collect();
                let truth = data.iter().sum::<u64>() as f64 / n as f64;
                assert_eq!(combine(&releases, aggs, n, m).unwrap(), truth);
            }
        }
    }
}
