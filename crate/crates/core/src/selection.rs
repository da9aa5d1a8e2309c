//! Distributed report-noisy-max.
//!
//! Clients share their answer vector `(q_1(x), …, q_k(x))`. Every aggregator
//! sums its shares and adds independent discrete Laplace noise of scale
//! `2/ε` to each coordinate. An evaluator, standing in for a secure
//! computation, adds the noisy totals, lifts them to signed integers and
//! reveals only the index of the largest.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::counting::{CountingQuery, Datum};
use crate::error::{Error, Result};
use crate::field::{FieldModulus, FieldVector};
use crate::noise::{NoiseSpec, Rational};
use crate::sharing::{self, Accumulator, ShareBundle};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionInstance {
    pub queries: Vec<CountingQuery>,
    pub epsilon: Rational,
    pub m: usize,
    pub modulus: FieldModulus,
}

impl SelectionInstance {
    pub fn new(
        queries: Vec<CountingQuery>,
        epsilon: Rational,
        m: usize,
        modulus: FieldModulus,
    ) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::NoQueries);
        }
        if m == 0 {
            return Err(Error::NoAggregators);
        }
        Ok(SelectionInstance {
            queries,
            epsilon,
            m,
            modulus,
        })
    }

    pub fn k(&self) -> usize {
        self.queries.len()
    }

    /// Per-coordinate Laplace scale `2/ε`.
    pub fn noise(&self) -> Result<NoiseSpec> {
        Ok(NoiseSpec::laplace(self.epsilon.two_over()?))
    }

    pub fn answers(&self, x: Datum) -> Vec<u64> {
        self.queries.iter().map(|q| q.eval(x)).collect()
    }
}

/// One aggregator's noisy per-query totals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoisyTotals {
    pub aggregator: usize,
    pub values: FieldVector,
}

pub fn client_encode_selection<R: RngCore + ?Sized>(
    x: Datum,
    instance: &SelectionInstance,
    rng: &mut R,
) -> Result<ShareBundle> {
    let answers = FieldVector::from_values(instance.modulus, instance.answers(x))?;
    sharing::share_vector(&answers, instance.m, rng)
}

/// Sums the shares (0-based client index, vector) and adds Laplace noise;
/// `noise = None` disables it (tests only).
pub fn aggregator_noisy_totals<R: RngCore + ?Sized>(
    aggregator: usize,
    shares: &[(usize, FieldVector)],
    n: usize,
    k: usize,
    modulus: FieldModulus,
    noise: Option<NoiseSpec>,
    rng: &mut R,
) -> Result<NoisyTotals> {
    let mut acc = Accumulator::new(modulus, n, k);
    for (client, share) in shares {
        acc.absorb(*client, share)?;
    }
    let mut values = acc.finish()?;
    if let Some(spec) = noise {
        values.add_signed(&spec.sample_vec(k, rng))?;
    }
    Ok(NoisyTotals { aggregator, values })
}

/// Index of the largest centered total, lowest index on ties.
pub fn argmax_lifted(values: &[i64]) -> Option<usize> {
    let mut best: Option<(usize, i64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// The evaluator: needs exactly one totals vector from each of `m`
/// aggregators and reveals only the winning index.
pub fn ideal_argmax(totals: &[NoisyTotals], m: usize) -> Result<usize> {
    let first = totals
        .first()
        .ok_or_else(|| Error::MissingRelease("aggregator 1".into()))?;
    let mut seen = vec![false; m];
    let mut sum = FieldVector::zeros(first.values.modulus(), first.values.len());
    for t in totals {
        match seen.get_mut(t.aggregator) {
            Some(s) if !*s => *s = true,
            _ => {
                return Err(Error::Malformed(format!(
                    "unexpected totals from aggregator {}",
                    t.aggregator + 1
                )))
            }
        }
        sum.add_assign(&t.values)?;
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::MissingRelease(format!("aggregator {}", j + 1)));
    }
    argmax_lifted(&sum.centered_lift()).ok_or(Error::NoQueries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selected_index: usize,
    /// Pure-DP guarantee of the release, from one honest aggregator's noise.
    pub epsilon: f64,
}

/// Runs the whole pipeline in process with a single randomness source.
pub fn run_selection<R: RngCore + ?Sized>(
    instance: &SelectionInstance,
    dataset: &[Datum],
    rng: &mut R,
) -> Result<SelectionOutcome> {
    run_selection_with(instance, dataset, Some(instance.noise()?), rng)
}

pub(crate) fn run_selection_with<R: RngCore + ?Sized>(
    instance: &SelectionInstance,
    dataset: &[Datum],
    noise: Option<NoiseSpec>,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    let (n, k, m) = (dataset.len(), instance.k(), instance.m);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut per_agg: Vec<Vec<(usize, FieldVector)>> = vec![Vec::with_capacity(n); m];
    for (i, &x) in dataset.iter().enumerate() {
        let bundle = client_encode_selection(x, instance, rng)?;
        for (j, share) in bundle.into_shares().into_iter().enumerate() {
            per_agg[j].push((i, share));
        }
    }
    let totals = per_agg
        .iter()
        .enumerate()
        .map(|(j, shares)| {
            aggregator_noisy_totals(j, shares, n, k, instance.modulus, noise, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionOutcome {
        selected_index: ideal_argmax(&totals, m)?,
        epsilon: instance.epsilon.to_f64(),
    })
}
