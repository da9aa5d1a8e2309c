use std::collections::{BTreeMap, BTreeSet};

use mcdp_core::counting::CountingQuery;
use mcdp_core::selection::argmax_lifted;
use mcdp_core::transport::{ProtocolRun, ProtocolSpec, PublicOutputs, RunConfig, Transcript};
use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

fn mean_of(q: &CountingQuery, data: &[u64]) -> f64 {
    data.iter().filter(|&&x| q.eval(x) == 1).count() as f64 / data.len() as f64
}

fn frequency(y: u64, data: &[u64]) -> f64 {
    data.iter().filter(|&&x| x == y).count() as f64 / data.len() as f64
}

/// JSON report of one run. Truth and measured error appear only when
/// `reveal` is set.
pub fn run_report(
    command: &str,
    seed: u64,
    config: &RunConfig,
    data: &[u64],
    run: &ProtocolRun,
    reveal: bool,
) -> Value {
    let outputs = run.outputs();
    let mut v = json!({
        "command": command,
        "seed": seed,
        "n": data.len(),
        "config": config,
        "outputs": outputs,
        "privacy": run.privacy,
    });
    match (&config.spec, outputs) {
        (ProtocolSpec::Count { .. }, PublicOutputs::Count { estimate }) => {
            v["summary"] = json!({
                "estimate": estimate,
                "predicted_std": run.privacy.predicted_std,
            });
        }
        (ProtocolSpec::Select { queries, .. }, PublicOutputs::Select { selected_index }) => {
            v["summary"] = json!({
                "selected_index": selected_index,
                "epsilon_accounted": run.privacy.epsilon,
                "k": queries.len(),
                "m": config.m,
                "n": data.len(),
            });
        }
        _ => {}
    }
    if reveal {
        let (truth, error) = truth_and_error(&config.spec, outputs, data);
        v["truth"] = truth;
        v["measured_error"] = error;
    }
    v
}

fn max_abs(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn truth_and_error(spec: &ProtocolSpec, outputs: &PublicOutputs, data: &[u64]) -> (Value, Value) {
    match (spec, outputs) {
        (ProtocolSpec::Count { query, .. }, PublicOutputs::Count { estimate }) => {
            let t = mean_of(query, data);
            (json!(t), json!((estimate - t).abs()))
        }
        (ProtocolSpec::Freq { tau: None, .. }, PublicOutputs::Freq { estimates, .. }) => {
            let t: Vec<f64> = estimates.iter().map(|e| frequency(e.element, data)).collect();
            let err = max_abs(estimates.iter().map(|e| e.frequency).zip(t.iter().copied()));
            (json!(t), json!(err))
        }
        (
            ProtocolSpec::Freq {
                tau: Some(tau),
                candidates,
                ..
            },
            PublicOutputs::Freq { heavy_hitters, .. },
        ) => {
            let pool: BTreeSet<u64> = match candidates {
                Some(c) => c.iter().copied().collect(),
                None => data.iter().copied().collect(),
            };
            let truly: BTreeSet<u64> = pool
                .into_iter()
                .filter(|&y| frequency(y, data) >= *tau)
                .collect();
            let found: BTreeSet<u64> = heavy_hitters
                .iter()
                .flatten()
                .map(|h| h.element)
                .collect();
            (
                json!(truly),
                json!({
                    "missed": truly.difference(&found).collect::<Vec<_>>(),
                    "spurious": found.difference(&truly).collect::<Vec<_>>(),
                }),
            )
        }
        (ProtocolSpec::Threshold { .. }, PublicOutputs::Threshold { counts }) => {
            let t: Vec<i64> = counts
                .iter()
                .map(|a| data.iter().filter(|&&x| x <= a.threshold).count() as i64)
                .collect();
            let err = counts
                .iter()
                .zip(&t)
                .map(|(a, &t)| (a.count - t).abs())
                .max()
                .unwrap_or(0);
            (json!(t), json!(err))
        }
        (ProtocolSpec::Sampled { queries, .. }, PublicOutputs::Sampled { estimates, .. }) => {
            let t: Vec<f64> = queries.iter().map(|q| mean_of(q, data)).collect();
            let err = max_abs(estimates.iter().map(|e| e.estimate).zip(t.iter().copied()));
            (json!(t), json!(err))
        }
        (ProtocolSpec::Select { queries, .. }, PublicOutputs::Select { selected_index }) => {
            let counts: Vec<i64> = queries
                .iter()
                .map(|q| data.iter().filter(|&&x| q.eval(x) == 1).count() as i64)
                .collect();
            let best = argmax_lifted(&counts);
            let gap = best.map(|b| counts[b] - counts[*selected_index]);
            (
                json!({ "counts": counts, "argmax": best }),
                json!({ "correct": best == Some(*selected_index), "count_gap": gap }),
            )
        }
        _ => (Value::Null, Value::Null),
    }
}

/// Messages per round and the evaluator's output count.
pub fn census(t: &Transcript) -> Value {
    let mut per_round: BTreeMap<u32, usize> = BTreeMap::new();
    for msg in &t.messages {
        *per_round.entry(msg.round).or_default() += 1;
    }
    let evaluator = t
        .messages
        .iter()
        .filter(|m| m.from == mcdp_core::transport::PartyId::EVALUATOR)
        .count();
    json!({
        "total": t.messages.len(),
        "per_round": per_round,
        "evaluator_outputs": evaluator,
        "payload_bytes": t.messages.iter().map(|m| m.payload.len()).sum::<usize>(),
    })
}

/// The given points, or every distinct value in the data.
pub fn sweep_points(points: &[u64], data: &[u64]) -> Vec<u64> {
    if !points.is_empty() {
        return points.to_vec();
    }
    data.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Largest `|f̂(y) - f(y)|` over the published points.
pub fn max_frequency_error(outputs: &PublicOutputs, data: &[u64]) -> f64 {
    match outputs {
        PublicOutputs::Freq { estimates, .. } => max_abs(
            estimates
                .iter()
                .map(|e| (e.frequency, frequency(e.element, data))),
        ),
        _ => f64::NAN,
    }
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    ell: usize,
    trials: usize,
    alpha_mean: f64,
    alpha_p95: f64,
    predicted_noise_std: Option<f64>,
}

impl SweepRow {
    pub fn new(ell: usize, alphas: &[f64], predicted_noise_std: Option<f64>) -> Self {
        let mut sorted = alphas.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        SweepRow {
            ell,
            trials: alphas.len(),
            alpha_mean: alphas.iter().sum::<f64>() / alphas.len() as f64,
            alpha_p95: sorted[rank - 1],
            predicted_noise_std,
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::Protocol(format!("writing sweep: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Protocol(format!("writing sweep: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
