use mcdp_core::counting::{CountingQuery, Predicate};
use mcdp_core::field::FieldModulus;
use mcdp_core::sketch::SketchParams;
use mcdp_core::transport::{
    adversary_view, run_protocol, Message, PartyId, ProtocolRun, ProtocolSpec, PublicOutputs,
    Role, RunConfig,
};
use mcdp_core::Rational;
use proptest::prelude::*;

fn q(id: &str, p: Predicate) -> CountingQuery {
    CountingQuery::new(id, p)
}

fn r(s: &str) -> Option<Rational> {
    Some(s.parse().unwrap())
}

fn specs() -> Vec<(usize, ProtocolSpec)> {
    vec![
        (3, ProtocolSpec::Count { query: q("odd", Predicate::Odd), sigma: r("4") }),
        (
            2,
            ProtocolSpec::Freq {
                sketch: SketchParams::new(16, 4, 1).unwrap(),
                sigma0: r("1"),
                points: vec![1, 2],
                tau: Some(0.2),
                candidates: None,
            },
        ),
        (2, ProtocolSpec::Threshold { domain_bits: 4, sigma: r("2"), thresholds: vec![0, 7, 15] }),
        (
            2,
            ProtocolSpec::Sampled {
                queries: vec![q("a", Predicate::All), q("b", Predicate::Lt(4)), q("c", Predicate::Even)],
                sigma: r("1"),
            },
        ),
        (
            3,
            ProtocolSpec::Select {
                queries: vec![q("a", Predicate::Lt(4)), q("b", Predicate::Ge(4))],
                epsilon: "1".parse().unwrap(),
            },
        ),
    ]
}

const DATA: [u64; 6] = [1, 2, 2, 5, 9, 14];

fn run(m: usize, spec: ProtocolSpec, data: &[u64], seed: u64) -> ProtocolRun {
    run_protocol(&RunConfig::new(m, spec), data, seed).unwrap()
}

#[test]
fn message_census() {
    for (m, spec) in specs() {
        let select = matches!(spec, ProtocolSpec::Select { .. });
        let t = run(m, spec, &DATA, 4).transcript;
        let n = DATA.len();
        let round = |r: u32| t.messages.iter().filter(|msg| msg.round == r).count();
        assert_eq!(round(0), n * m);
        assert_eq!(round(1), m);
        let from_eval: Vec<&Message> = t.messages.iter().filter(|msg| msg.from == PartyId::EVALUATOR).collect();
        if select {
            assert_eq!(from_eval.len(), 1);
            assert_eq!(from_eval[0].payload.len(), 4);
            assert_eq!(from_eval[0].to, PartyId::COMBINER);
        } else {
            assert!(from_eval.is_empty());
        }
        assert!(t.messages.iter().all(|msg| msg.to != PartyId::EVALUATOR || select));
    }
}

#[test]
fn reruns_are_byte_identical() {
    for (m, spec) in specs() {
        let a = run(m, spec.clone(), &DATA, 11);
        let b = run(m, spec, &DATA, 11);
        assert_eq!(a.transcript.to_jsonl(), b.transcript.to_jsonl());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

// Pinned from the first run; identical with and without the `parallel` feature.
const PINNED_SEED11: [&str; 5] = [
    r#"{"protocol":"count","estimate":-0.3333333333333333}"#,
    r#"{"protocol":"freq","sketch":[0,3,-4,13,-4,3,-6,-9,0,2,12,-7,4,0,10,6],"estimates":[{"element":1,"frequency":0.6979166666666666},{"element":2,"frequency":0.46875}],"heavy_hitters":[{"element":1,"frequency":0.6979166666666666},{"element":5,"frequency":0.6145833333333334},{"element":7,"frequency":0.6145833333333334},{"element":15,"frequency":0.53125},{"element":14,"frequency":0.4895833333333333},{"element":2,"frequency":0.46875},{"element":12,"frequency":0.3854166666666667}]}"#,
    r#"{"protocol":"threshold","counts":[{"threshold":0,"count":-2},{"threshold":7,"count":15},{"threshold":15,"count":21}]}"#,
    r#"{"protocol":"sampled","estimates":[{"id":"a","estimate":0.5},{"id":"b","estimate":2.0},{"id":"c","estimate":-1.0}],"sampling_std_bound":0.5773502691896257}"#,
    r#"{"protocol":"select","selected_index":0}"#,
];

#[test]
fn pinned_outputs() {
    for ((m, spec), want) in specs().into_iter().zip(PINNED_SEED11) {
        let got = serde_json::to_string(run(m, spec, &DATA, 11).outputs()).unwrap();
        assert_eq!(got, want);
    }
}

#[test]
fn noise_free_outputs_match_brute_force() {
    let data = [0u64, 3, 3, 7, 8, 15, 15, 15];
    let n = data.len() as f64;
    let t = run(
        2,
        ProtocolSpec::Threshold { domain_bits: 4, sigma: None, thresholds: (0..16).collect() },
        &data,
        1,
    );
    let PublicOutputs::Threshold { counts } = t.outputs() else { panic!() };
    for a in counts {
        assert_eq!(a.count, data.iter().filter(|&&x| x <= a.threshold).count() as i64);
    }

    let queries = vec![q("all", Predicate::All), q("lt8", Predicate::Lt(8)), q("odd", Predicate::Odd)];
    let s = run(2, ProtocolSpec::Sampled { queries: queries.clone(), sigma: None }, &data, 2);
    let PublicOutputs::Sampled { estimates, sampling_std_bound } = s.outputs() else { panic!() };
    assert!((sampling_std_bound - (2.0 / n).sqrt()).abs() < 1e-12);
    assert_eq!(estimates.len(), 3);
    // Each estimate is k/n times a count of answered-and-true clients.
    for e in estimates {
        let c = e.estimate * n / 3.0;
        assert!((c - c.round()).abs() < 1e-9 && c >= 0.0 && c <= n);
    }

    let sel = run(
        2,
        ProtocolSpec::Count { query: q("big", Predicate::Ge(8)), sigma: None },
        &data,
        3,
    );
    assert_eq!(sel.outputs(), &PublicOutputs::Count { estimate: 4.0 / n });

    let params = SketchParams::new(64, 4, 3).unwrap();
    let f = run(
        3,
        ProtocolSpec::Freq { sketch: params.clone(), sigma0: None, points: vec![15], tau: None, candidates: None },
        &data,
        4,
    );
    let PublicOutputs::Freq { sketch, estimates, .. } = f.outputs() else { panic!() };
    let mut direct = vec![0i64; 64];
    for &x in &data {
        for (d, s) in direct.iter_mut().zip(mcdp_core::sketch::sketch_column(x, &params).unwrap()) {
            *d += s;
        }
    }
    assert_eq!(sketch, &direct);
    assert!((estimates[0].frequency - 3.0 / n).abs() < 0.3);
}

#[test]
fn fss_protocols_need_two_aggregators() {
    for (_, spec) in specs().into_iter().skip(2).take(2) {
        let err = run_protocol(&RunConfig::new(3, spec), &DATA, 1).unwrap_err();
        assert!(matches!(err, mcdp_core::Error::Config(_)));
    }
}

#[test]
fn small_moduli_are_refused_unless_unchecked() {
    let (m, spec) = specs().remove(0);
    let mut cfg = RunConfig::new(m, spec).with_modulus(FieldModulus::new(127).unwrap());
    assert!(run_protocol(&cfg, &DATA, 1).is_err());
    cfg.enforce_margin = false;
    assert!(run_protocol(&cfg, &DATA, 1).is_ok());
}

#[test]
fn reports_carry_privacy_fields() {
    for (m, spec) in specs() {
        let run = run(m, spec, &DATA, 5);
        let json = serde_json::to_value(&run.privacy).unwrap();
        for field in ["mechanism", "epsilon", "delta", "rho", "sigma", "amplified_epsilon", "predicted_std"] {
            assert!(json.get(field).is_some(), "{field}");
        }
        assert!(run.privacy.epsilon.unwrap() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn views_plus_honest_internals_cover_the_transcript(which in 0usize..5, j_pick in 0usize..3, i_pick in 0usize..6, seed in any::<u64>()) {
        let (m, spec) = specs().remove(which);
        let t = run(m, spec, &DATA, seed).transcript;
        let j = j_pick % m + 1;
        let i = i_pick % DATA.len() + 1;
        let view = adversary_view(&t, j, i).unwrap();
        let honest = |p: PartyId| (p.role == Role::Aggregator && p.index as usize == j)
            || (p.role == Role::Client && p.index as usize == i);
        for msg in &t.messages {
            let in_view = view.contains(msg);
            prop_assert!(in_view || honest(msg.from) || honest(msg.to));
            // Private messages between the two honest parties never leak.
            if honest(msg.from) && honest(msg.to) {
                prop_assert!(!in_view);
            }
            // The evaluator's inputs from the honest aggregator stay hidden.
            if msg.to == PartyId::EVALUATOR && honest(msg.from) {
                prop_assert!(!in_view);
            }
        }
        // The selected index is the only thing the evaluator emits.
        for msg in t.messages.iter().filter(|m| m.from == PartyId::EVALUATOR) {
            prop_assert!(view.public.contains(msg));
        }
    }
}
