#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Discrete Gaussian pmf on `[-span, span]` from the truncated series
/// `exp(-x²/2σ²) / Σ_y exp(-y²/2σ²)`.
pub fn discrete_gaussian_pmf(sigma: f64, span: i64) -> Vec<(i64, f64)> {
    let tail = span.max((40.0 * sigma) as i64 + 10);
    let w = |x: i64| (-(x as f64).powi(2) / (2.0 * sigma * sigma)).exp();
    let z: f64 = (-tail..=tail).map(w).sum();
    (-span..=span).map(|x| (x, w(x) / z)).collect()
}

/// Discrete Laplace pmf `(1 - t)/(1 + t) · t^|x|`, `t = e^{-1/b}`, from
/// summing the geometric series.
pub fn discrete_laplace_pmf(b: f64, span: i64) -> Vec<(i64, f64)> {
    let t = (-1.0 / b).exp();
    (-span..=span)
        .map(|x| (x, (1.0 - t) / (1.0 + t) * t.powi(x.unsigned_abs() as i32)))
        .collect()
}

/// Goodness-of-fit p-value of integer samples against a pmf. Cells with
/// expected count below 5 are pooled together with everything outside the
/// pmf's support.
pub fn chi_square_gof(samples: &[i64], pmf: &[(i64, f64)]) -> f64 {
    let n = samples.len() as f64;
    let lo = pmf.first().unwrap().0;
    let mut counts = vec![0u64; pmf.len()];
    let mut outside = 0u64;
    for &s in samples {
        let idx = s - lo;
        if idx >= 0 && (idx as usize) < counts.len() {
            counts[idx as usize] += 1;
        } else {
            outside += 1;
        }
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    let mut pooled_obs = outside as f64;
    let mut pooled_exp = n * (1.0 - pmf.iter().map(|c| c.1).sum::<f64>()).max(0.0);
    for (&(_, p), &c) in pmf.iter().zip(&counts) {
        let e = n * p;
        if e < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += e;
        } else {
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

/// Two-sample chi-square p-value for histograms over the same cells.
pub fn two_sample_p_value(a: &[u64], b: &[u64]) -> f64 {
    let (ra, rb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut cells = 0;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        let pooled = (x + y) as f64 / (ra + rb);
        let (ea, eb) = (ra * pooled, rb * pooled);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Empirical `q`-quantile (nearest rank).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
