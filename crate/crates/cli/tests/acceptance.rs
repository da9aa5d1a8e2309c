//! Acceptance gate: one line per criterion, nonzero exit on any failure.

use std::process::{Command, ExitCode};
use std::thread;
use std::time::Instant;

use mcdp_core::counting::{CountingQuery, Predicate};
use mcdp_core::field::{FieldModulus, FieldVector};
use mcdp_core::fss::{dpf_eval_full, dpf_gen, sampled_depth, sampled_query_encode, PointFunction, LAMBDA};
use mcdp_core::noise::{sample_discrete_gaussian, sample_discrete_laplace, PrivacyBudget};
use mcdp_core::sharing::{self, ShareBundle, Sharer};
use mcdp_core::sketch::SketchParams;
use mcdp_core::transport::{run_protocol, PartyId, ProtocolSpec, PublicOutputs, RunConfig};
use mcdp_core::{Rational, Result as CoreResult};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Geometric, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const ALPHA: f64 = 0.001;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rat(s: &str) -> Rational {
    s.parse().expect("valid rational")
}

/// Runs `f(0..count)` across all cores and returns results in index order.
fn parallel<T: Send, F: Fn(usize) -> T + Sync>(count: usize, f: F) -> Vec<T> {
    let workers = thread::available_parallelism().map_or(4, |n| n.get()).min(count.max(1));
    let chunk = count.div_ceil(workers.max(1)).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = (0..count)
            .step_by(chunk)
            .map(|start| {
                let f = &f;
                s.spawn(move || (start..(start + chunk).min(count)).map(f).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

fn two_sample_p(a: &[u64], b: &[u64]) -> f64 {
    let (ra, rb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        let pooled = (x + y) as f64 / (ra + rb);
        stat += (x as f64 - ra * pooled).powi(2) / (ra * pooled)
            + (y as f64 - rb * pooled).powi(2) / (rb * pooled);
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

/// Goodness of fit against a pmf on `[-span, span]`; cells expecting
/// fewer than 5 hits are pooled with the mass outside.
fn gof_p(samples: &[i64], pmf: &[f64], span: i64) -> f64 {
    let n = samples.len() as f64;
    let mut counts = vec![0u64; pmf.len()];
    let mut outside = 0u64;
    for &s in samples {
        if s.abs() <= span {
            counts[(s + span) as usize] += 1;
        } else {
            outside += 1;
        }
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    let mut pooled = (outside as f64, n * (1.0 - pmf.iter().sum::<f64>()).max(0.0));
    for (&p, &c) in pmf.iter().zip(&counts) {
        let e = n * p;
        if e < 5.0 {
            pooled.0 += c as f64;
            pooled.1 += e;
        } else {
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled.1 > 0.0 {
        stat += (pooled.0 - pooled.1).powi(2) / pooled.1;
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

fn gaussian_pmf(sigma: f64, span: i64) -> Vec<f64> {
    let tail = (60.0 * sigma) as i64 + 20;
    let w = |x: i64| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp();
    let z: f64 = (-tail..=tail).map(w).sum();
    (-span..=span).map(|x| w(x) / z).collect()
}

fn laplace_pmf(b: f64, span: i64) -> Vec<f64> {
    let tail = (60.0 * b) as i64 + 40;
    let w = |x: i64| (-(x.abs() as f64) / b).exp();
    let z: f64 = (-tail..=tail).map(w).sum();
    (-span..=span).map(|x| w(x) / z).collect()
}

fn sharing_roundtrip() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut checked = 0u64;
    let mut failures = 0u64;
    for p in [17u64, 127, 257] {
        let modulus = FieldModulus::new(p).unwrap();
        for m in 1..=4 {
            for s in 0..p {
                let secret = modulus.element(s).unwrap();
                let bundle = sharing::share(secret, m, &mut rng).unwrap();
                let back = sharing::reconstruct_scalar(&bundle).unwrap();
                checked += 1;
                if back != secret || bundle.m() != m {
                    failures += 1;
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        failures == 0 && secs < 10.0,
        format!("{checked} secrets, {failures} failures, {secs:.2}s"),
    )
}

/// Every share but the last is uniform and the last is zero.
struct ZeroLastShare;

impl Sharer for ZeroLastShare {
    fn share_vector(&self, secret: &FieldVector, m: usize, rng: &mut dyn RngCore) -> CoreResult<ShareBundle> {
        let p = secret.modulus();
        let mut rest: Vec<i64> = secret.values().iter().map(|&v| v as i64).collect();
        let mut shares = Vec::new();
        for _ in 0..m - 2 {
            let s: Vec<u64> = (0..secret.len()).map(|_| rng.random_range(0..p.value())).collect();
            for (r, &v) in rest.iter_mut().zip(&s) {
                *r -= v as i64;
            }
            shares.push(FieldVector::from_values(p, s)?);
        }
        shares.push(FieldVector::from_signed(p, &rest));
        shares.push(FieldVector::zeros(p, secret.len()));
        ShareBundle::from_shares(shares)
    }
}

/// Joint histogram of the first `m - 1` shares of `secret` over `draws`.
fn share_histogram(sharer: &dyn Sharer, secret: u64, seed: u64, draws: usize) -> Vec<u64> {
    const P: u64 = 17;
    let modulus = FieldModulus::new(P).unwrap();
    let secret = FieldVector::from_values(modulus, vec![secret]).unwrap();
    let parts = parallel(8, |w| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(w as u64);
        let mut h = vec![0u64; (P * P) as usize];
        for _ in 0..draws / 8 {
            let b = sharer.share_vector(&secret, 3, &mut rng).unwrap();
            let cell = b.share(0).values()[0] * P + b.share(1).values()[0];
            h[cell as usize] += 1;
        }
        h
    });
    parts.iter().fold(vec![0u64; (P * P) as usize], |mut acc, h| {
        acc.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        acc
    })
}

fn share_uniformity() -> Verdict {
    let draws = 1_000_000;
    let honest = two_sample_p(
        &share_histogram(&sharing::AdditiveSharer, 3, 2, draws),
        &share_histogram(&sharing::AdditiveSharer, 11, 3, draws),
    );
    let broken = two_sample_p(
        &share_histogram(&ZeroLastShare, 3, 2, draws),
        &share_histogram(&ZeroLastShare, 11, 3, draws),
    );
    check(
        honest >= ALPHA && broken < ALPHA,
        format!("honest p = {honest:.4}, broken sharer p = {broken:.2e}"),
    )
}

fn counting_accuracy() -> Verdict {
    let started = Instant::now();
    let (n, m, runs) = (1000usize, 3usize, 10_000usize);
    let data: Vec<u64> = (0..n as u64).collect();
    let config = RunConfig::new(
        m,
        ProtocolSpec::Count {
            query: CountingQuery::new("low", Predicate::Lt(300)),
            sigma: Some(rat("10")),
        },
    );
    let truth = 0.3;
    let estimates = parallel(runs, |r| match run_protocol(&config, &data, r as u64).unwrap().outputs() {
        PublicOutputs::Count { estimate } => *estimate,
        _ => unreachable!(),
    });
    let (mean, std) = mean_std(&estimates);
    let target = 3f64.sqrt() * 10.0 / n as f64;
    let se = std / (runs as f64).sqrt();
    let secs = started.elapsed().as_secs_f64();
    check(
        (std / target - 1.0).abs() <= 0.05 && (mean - truth).abs() <= 4.0 * se && secs < 60.0,
        format!(
            "std {std:.6} vs {target:.6}, mean {mean:.6} vs {truth} ({:.2} SE), {secs:.1}s",
            (mean - truth) / se
        ),
    )
}

fn accountant() -> Verdict {
    let eps = PrivacyBudget::from_sigma(1.0, (-2f64).exp()).unwrap().epsilon;
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for i in 0..100 {
        let sigma = 0.25 + i as f64 * 0.25;
        let e = PrivacyBudget::from_sigma(sigma, 1e-6).unwrap().epsilon;
        let e_smaller_delta = PrivacyBudget::from_sigma(sigma, 1e-9).unwrap().epsilon;
        monotone &= e < prev && e_smaller_delta > e;
        prev = e;
    }
    check(
        (eps - 2.5).abs() <= 1e-12 && monotone,
        format!("ε(1, e^-2) = {eps:.15}, monotone on 100 σ values: {monotone}"),
    )
}

fn sampler_exactness() -> Verdict {
    let draws = 1_000_000;
    let mut ps = Vec::new();
    for (i, sigma) in ["1", "5"].iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(50 + i as u64);
        let s: Vec<i64> = (0..draws).map(|_| sample_discrete_gaussian(rat(sigma), &mut rng)).collect();
        let span = 12 * sigma.parse::<i64>().unwrap();
        ps.push((format!("gauss σ={sigma}"), gof_p(&s, &gaussian_pmf(sigma.parse().unwrap(), span), span)));
    }
    for (i, b) in ["1", "2"].iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(60 + i as u64);
        let s: Vec<i64> = (0..draws).map(|_| sample_discrete_laplace(rat(b), &mut rng)).collect();
        let span = 30 * b.parse::<i64>().unwrap();
        ps.push((format!("laplace b={b}"), gof_p(&s, &laplace_pmf(b.parse().unwrap(), span), span)));
    }
    let detail = ps
        .iter()
        .map(|(name, p)| format!("{name}: p = {p:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(ps.iter().all(|(_, p)| *p >= ALPHA), detail)
}

fn dpf_correctness() -> Verdict {
    let modulus = FieldModulus::default();
    let mut failures = 0usize;
    let mut points = 0usize;
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for depth in 0..=10u32 {
        for _ in 0..100 {
            let alpha = if depth == 0 { 0 } else { rng.random_range(0..1u64 << depth) };
            let beta = rng.random_range(0..modulus.value());
            let mut key_rng = ChaCha20Rng::seed_from_u64(rng.next_u64());
            let f = PointFunction {
                alpha,
                beta: modulus.element(beta).unwrap(),
            };
            let (k0, k1) = dpf_gen(f, LAMBDA, depth, &mut key_rng).unwrap();
            let (a, b) = (dpf_eval_full(&k0).unwrap(), dpf_eval_full(&k1).unwrap());
            for (x, (&u, &v)) in a.values().iter().zip(b.values()).enumerate() {
                let sum = ((u as u128 + v as u128) % modulus.value() as u128) as u64;
                let want = if x as u64 == alpha { beta } else { 0 };
                points += 1;
                failures += (sum != want) as usize;
            }
        }
    }
    check(failures == 0, format!("{points} points over depths 0..=10, {failures} failures"))
}

fn threshold_config(bits: u32, sigma: Option<Rational>) -> RunConfig {
    RunConfig::new(
        2,
        ProtocolSpec::Threshold {
            domain_bits: bits,
            sigma,
            thresholds: (0..1u64 << bits).collect(),
        },
    )
}

fn threshold_counts(config: &RunConfig, data: &[u64], seed: u64) -> Vec<i64> {
    match run_protocol(config, data, seed).unwrap().outputs() {
        PublicOutputs::Threshold { counts } => counts.iter().map(|a| a.count).collect(),
        _ => unreachable!(),
    }
}

fn threshold_protocol() -> Verdict {
    // Noise off: every domain size up to 64, every n up to 16, every
    // constant dataset and 20 random ones per shape.
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut cases = Vec::new();
    for bits in 0..=6u32 {
        let size = 1u64 << bits;
        for n in 1..=16usize {
            for v in 0..size {
                cases.push((bits, vec![v; n]));
            }
            for _ in 0..20 {
                cases.push((bits, (0..n).map(|_| rng.random_range(0..size)).collect()));
            }
        }
    }
    let mismatches: usize = parallel(cases.len(), |c| {
        let (bits, data) = &cases[c];
        let got = threshold_counts(&threshold_config(*bits, None), data, c as u64);
        let want: Vec<i64> = (0..1u64 << bits)
            .map(|t| data.iter().filter(|&&x| x <= t).count() as i64)
            .collect();
        (got != want) as usize
    })
    .into_iter()
    .sum();

    // Noise on: max over the 64 thresholds of |error|, against prefix sums
    // of continuous Gaussians with the same total variance 2σ².
    let (sigma, runs): (f64, usize) = (4.0, 4000);
    let config = threshold_config(6, Some(rat("4")));
    let data: Vec<u64> = (0..32u64).map(|i| (i * 7) % 64).collect();
    let want: Vec<i64> = (0..64u64)
        .map(|t| data.iter().filter(|&&x| x <= t).count() as i64)
        .collect();
    let measured = parallel(runs, |r| {
        threshold_counts(&config, &data, 1_000_000 + r as u64)
            .iter()
            .zip(&want)
            .map(|(g, w)| (g - w).abs() as f64)
            .fold(0.0, f64::max)
    });
    let normal = Normal::new(0.0, (2.0 * sigma * sigma).sqrt()).unwrap();
    let mut orng = ChaCha20Rng::seed_from_u64(77);
    let oracle: Vec<f64> = (0..20_000)
        .map(|_| {
            let mut s: f64 = 0.0;
            let mut worst: f64 = 0.0;
            for _ in 0..64 {
                s += normal.sample(&mut orng);
                worst = worst.max(s.abs());
            }
            worst
        })
        .collect();
    let (q_run, q_oracle) = (quantile(&measured, 0.95), quantile(&oracle, 0.95));
    let rel = (q_run / q_oracle - 1.0).abs();
    check(
        mismatches == 0 && rel <= 0.10,
        format!(
            "noise off: {} datasets, {mismatches} mismatches; noise on: p95 {q_run:.2} vs oracle {q_oracle:.2} ({:.1}%)",
            cases.len(),
            rel * 100.0
        ),
    )
}

fn freq_p95(data: &[u64], ell: usize, sigma0: Option<Rational>, points: &[u64], runs: usize) -> f64 {
    let errors = parallel(runs, |r| {
        let config = RunConfig::new(
            2,
            ProtocolSpec::Freq {
                sketch: SketchParams::new(ell, 12, 1000 + r as u64).unwrap(),
                sigma0,
                points: points.to_vec(),
                tau: None,
                candidates: None,
            },
        );
        let n = data.len() as f64;
        match run_protocol(&config, data, r as u64).unwrap().outputs() {
            PublicOutputs::Freq { estimates, .. } => estimates
                .iter()
                .map(|e| {
                    let truth = data.iter().filter(|&&x| x == e.element).count() as f64 / n;
                    (e.frequency - truth).abs()
                })
                .fold(0.0, f64::max),
            _ => unreachable!(),
        }
    });
    quantile(&errors, 0.95)
}

fn sketch_scaling() -> Verdict {
    let points: Vec<u64> = (0..10).collect();
    // Noise off: hashing error only, 300 sketch seeds per ℓ.
    let skewed: Vec<u64> = (0..400u64).map(|i| if i < 100 { i % 10 } else { i }).collect();
    let e64 = freq_p95(&skewed, 64, None, &points, 300);
    let e256 = freq_p95(&skewed, 256, None, &points, 300);
    // Noise on at large ℓ: distinct values, so hashing error is negligible.
    let e_n100 = freq_p95(&(0..100).collect::<Vec<_>>(), 1024, Some(rat("10")), &points, 300);
    let e_n200 = freq_p95(&(0..200).collect::<Vec<_>>(), 1024, Some(rat("10")), &points, 300);
    let (r_ell, r_n) = (e256 / e64, e_n200 / e_n100);
    let ok = |r: f64| (0.4..=0.6).contains(&r);
    check(
        ok(r_ell) && ok(r_n),
        format!(
            "ℓ 64→256: {e64:.4} → {e256:.4} (ratio {r_ell:.3}); n 100→200: {e_n100:.4} → {e_n200:.4} (ratio {r_n:.3})"
        ),
    )
}

fn selection_equivalence() -> Verdict {
    let runs = 100_000usize;
    let cutoffs = [100u64, 98, 95, 90, 80];
    let queries: Vec<CountingQuery> = cutoffs
        .iter()
        .map(|&c| CountingQuery::new(format!("lt{c}"), Predicate::Lt(c)))
        .collect();
    let data: Vec<u64> = (0..200).collect();
    let config = RunConfig::new(
        2,
        ProtocolSpec::Select {
            queries,
            epsilon: rat("1"),
        },
    );
    let outcomes = parallel(runs, |r| {
        let run = run_protocol(&config, &data, r as u64).unwrap();
        let leaked: Vec<_> = run
            .transcript
            .messages
            .iter()
            .filter(|msg| msg.from == PartyId::EVALUATOR)
            .collect();
        let census_ok = leaked.len() == 1 && leaked[0].payload.len() == 4;
        match run.outputs() {
            PublicOutputs::Select { selected_index } => (*selected_index, census_ok),
            _ => unreachable!(),
        }
    });
    let census_failures = outcomes.iter().filter(|o| !o.1).count();
    let mut dist = [0u64; 5];
    outcomes.iter().for_each(|o| dist[o.0] += 1);

    // Central report-noisy-max with the same total noise: two discrete
    // Laplace(2/ε) draws per query, each a difference of geometrics.
    let geom = Geometric::new(1.0 - (-0.5f64).exp()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let mut central = [0u64; 5];
    for _ in 0..runs {
        let mut best = (0usize, i64::MIN);
        for (i, &c) in cutoffs.iter().enumerate() {
            let mut v = c as i64;
            for _ in 0..2 {
                v += geom.sample(&mut rng) as i64 - geom.sample(&mut rng) as i64;
            }
            if v > best.1 {
                best = (i, v);
            }
        }
        central[best.0] += 1;
    }
    let tv: f64 = dist
        .iter()
        .zip(&central)
        .map(|(&a, &b)| (a as f64 - b as f64).abs() / runs as f64)
        .sum::<f64>()
        / 2.0;
    check(
        tv <= 0.02 && census_failures == 0,
        format!("TV {tv:.4}, distributed {dist:?}, central {central:?}, census failures {census_failures}"),
    )
}

fn sampled_protocol() -> Verdict {
    let (n, runs) = (200usize, 1000usize);
    let queries = vec![
        CountingQuery::new("low", Predicate::Lt(50)),
        CountingQuery::new("odd", Predicate::Odd),
        CountingQuery::new("high", Predicate::Gt(149)),
        CountingQuery::new("all", Predicate::All),
    ];
    let k = queries.len();
    let data: Vec<u64> = (0..n as u64).collect();
    let truth: Vec<f64> = queries
        .iter()
        .map(|q| data.iter().filter(|&&x| q.eval(x) == 1).count() as f64 / n as f64)
        .collect();
    let sigma: f64 = 2.0;
    let config = RunConfig::new(
        2,
        ProtocolSpec::Sampled {
            queries: queries.clone(),
            sigma: Some(rat("2")),
        },
    );
    let results = parallel(runs, |r| run_protocol(&config, &data, r as u64).unwrap());
    let mut worst_se: f64 = 0.0;
    for (j, &t) in truth.iter().enumerate() {
        let est: Vec<f64> = results
            .iter()
            .map(|run| match run.outputs() {
                PublicOutputs::Sampled { estimates, .. } => estimates[j].estimate,
                _ => unreachable!(),
            })
            .collect();
        let (mean, std) = mean_std(&est);
        worst_se = worst_se.max((mean - t).abs() / (std / (runs as f64).sqrt()));
    }

    let big_k = 1usize << 20;
    let many: Vec<CountingQuery> = (0..big_k as u64)
        .map(|i| CountingQuery::new(i.to_string(), Predicate::Eq(i)))
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let (key, _) = sampled_query_encode(5, &many, LAMBDA, FieldModulus::default(), &mut rng).unwrap();
    let d = (big_k as f64).log2().ceil() as usize;
    // Header (3) + root seed + per level (seed + control byte) + output word.
    let formula = 3 + LAMBDA / 8 + d * (LAMBDA / 8 + 1) + 8;
    let measured = key.to_bytes().len();

    let rho = 1.0 / (2.0 * sigma * sigma);
    let delta = config.delta;
    let eps = rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt();
    let amplified = (1.0 + (eps.exp() - 1.0) / k as f64).ln();
    let reported = results[0].privacy.amplified_epsilon.unwrap_or(f64::NAN);
    let amp_ok = (reported - amplified).abs() <= 1e-12 * amplified.max(1.0);
    check(
        worst_se <= 3.0 && measured == formula && sampled_depth(big_k) as usize == d && amp_ok,
        format!(
            "worst bias {worst_se:.2} SE; key at k=2^20: {measured} bytes vs formula {formula}; ε' {reported:.12} vs {amplified:.12}"
        ),
    )
}

fn cli_reproducibility() -> Verdict {
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("data.csv");
    let queries = dir.path().join("queries.txt");
    std::fs::write(&data, (0..80).map(|i| format!("{}\n", (i * 13) % 64)).collect::<String>()).unwrap();
    std::fs::write(&queries, "a,lt:20\nb,odd\nc,gt:40\n").unwrap();
    let (d, q) = (data.display().to_string(), queries.display().to_string());
    let commands: Vec<Vec<&str>> = vec![
        vec!["count", "--data", &d, "--sigma", "3", "--query", "lt:30", "--m", "3"],
        vec!["freq", "--data", &d, "--sigma0", "1", "--ell", "128", "--domain-bits", "6", "--points", "1,2,3"],
        vec!["hh", "--data", &d, "--sigma0", "1", "--ell", "128", "--domain-bits", "6", "--tau", "0.05"],
        vec!["threshold", "--data", &d, "--sigma", "2", "--domain-bits", "6"],
        vec!["sampled", "--data", &d, "--queries", &q, "--sigma", "2"],
        vec!["select", "--data", &d, "--queries", &q, "--epsilon", "1", "--m", "4"],
    ];
    let mut differing = Vec::new();
    for args in &commands {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let transcript = dir.path().join(format!("{}-{rep}.jsonl", args[0]));
            let out = Command::new(env!("CARGO_BIN_EXE_mcdp"))
                .args(args)
                .args(["--seed", "2024", "--dump-transcript"])
                .arg(&transcript)
                .output()
                .unwrap();
            if !out.status.success() {
                return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
            }
            outputs.push((out.stdout, std::fs::read(&transcript).unwrap()));
        }
        if outputs[0] != outputs[1] || outputs[0].1.is_empty() {
            differing.push(args[0]);
        }
    }
    check(
        differing.is_empty(),
        format!("{} commands run twice, differing: {differing:?}", commands.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("sharing roundtrip", sharing_roundtrip),
        ("share uniformity", share_uniformity),
        ("counting accuracy", counting_accuracy),
        ("accountant", accountant),
        ("sampler exactness", sampler_exactness),
        ("dpf correctness", dpf_correctness),
        ("threshold protocol", threshold_protocol),
        ("sketch error scaling", sketch_scaling),
        ("selection equivalence", selection_equivalence),
        ("sampled queries", sampled_protocol),
        ("cli reproducibility", cli_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {name:<22} {tag}  {detail} [{:.1}s]",
            i + 1,
            started.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
