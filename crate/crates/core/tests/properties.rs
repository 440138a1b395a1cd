use overscale_core::categorical::CategoricalAnswerModel;
use overscale_core::policy::{run_ac, run_dsc, run_esc, run_std_pt, run_t2};
use overscale_core::trace::answer_counts;
use overscale_core::vote::{
    enumerated_accuracy, exact_subset_accuracy, exact_subset_curve, prefix_vote_curve, subsample_accuracy,
};
use overscale_core::{Exact, QuestionTrace, SamplingConfig, SubsampleParams, TieRule, TraceDataset};
use num_traits::ToPrimitive;
use proptest::prelude::*;

/// Draws with dense ids: each new answer gets the next id.
fn dense_draws(max_len: usize, max_m: u32) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..max_m, 1..=max_len).prop_map(|raw| {
        let mut seen: Vec<u32> = Vec::new();
        raw.into_iter()
            .map(|a| match seen.iter().position(|&s| s == a) {
                Some(i) => i,
                None => {
                    seen.push(a);
                    seen.len() - 1
                }
            })
            .collect()
    })
}

fn trace_strategy(max_len: usize) -> impl Strategy<Value = QuestionTrace> {
    (dense_draws(max_len, 4), any::<prop::sample::Index>(), any::<bool>()).prop_map(|(draws, g, has_gold)| {
        let m = draws.iter().max().unwrap() + 1;
        let gold = has_gold.then(|| g.index(m));
        QuestionTrace::from_indices("q", gold, &draws).unwrap()
    })
}

fn dataset(traces: Vec<QuestionTrace>) -> TraceDataset {
    let n = traces.iter().map(QuestionTrace::n_max).min().unwrap();
    let traces = traces
        .into_iter()
        .enumerate()
        .map(|(i, mut t)| {
            t.draws.truncate(n);
            let m = t.num_answers();
            t.gold = t.gold.filter(|g| g.index() < m);
            t.question_id = format!("q{i}");
            t
        })
        .collect();
    TraceDataset::new(n, SamplingConfig::default(), traces).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_json_round_trips(traces in prop::collection::vec(trace_strategy(12), 1..5)) {
        let ds = dataset(traces);
        let back = TraceDataset::from_json_str(&ds.to_canonical_json()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn counts_sum_to_draws(t in trace_strategy(40)) {
        let c = answer_counts(&t);
        prop_assert_eq!(c.iter().sum::<usize>(), t.n_max());
        prop_assert!(c.iter().all(|&v| v > 0));
    }

    #[test]
    fn dp_equals_enumeration(t in trace_strategy(14)) {
        let counts = answer_counts(&t);
        let gold = t.gold.map(|g| g.index());
        let curve: Vec<Exact> = exact_subset_curve(&counts, gold, t.n_max(), TieRule::Fractional).unwrap();
        for n in 1..=t.n_max() {
            let e = enumerated_accuracy(&t, n, TieRule::Fractional).unwrap();
            prop_assert_eq!(&curve[n - 1], &e);
            let single: Exact = exact_subset_accuracy(&counts, gold, n, TieRule::Fractional).unwrap();
            prop_assert_eq!(&single, &e);
        }
    }

    #[test]
    fn single_and_double_precision_follow_the_rational_curve(t in trace_strategy(40)) {
        let counts = answer_counts(&t);
        let gold = t.gold.map(|g| g.index());
        let n = t.n_max();
        let exact: Vec<Exact> = exact_subset_curve(&counts, gold, n, TieRule::Fractional).unwrap();
        let f64s: Vec<f64> = exact_subset_curve(&counts, gold, n, TieRule::Fractional).unwrap();
        let f32s: Vec<f32> = exact_subset_curve(&counts, gold, n, TieRule::Fractional).unwrap();
        for i in 0..n {
            let r = exact[i].to_f64().unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((f64s[i] - r).abs() < 1e-12);
            prop_assert!((f32s[i] as f64 - r).abs() < 1e-4);
        }
    }

    #[test]
    fn enumerated_subsampling_is_exact(t in trace_strategy(10)) {
        let params = SubsampleParams::default();
        for n in 1..=t.n_max() {
            let e = enumerated_accuracy(&t, n, TieRule::FirstSeen).unwrap().to_f64().unwrap();
            let s = subsample_accuracy(&t, n, &SubsampleParams { tie_rule: TieRule::FirstSeen, ..params }).unwrap();
            prop_assert_eq!(s, e);
        }
    }

    #[test]
    fn full_budget_matches_the_whole_trace(t in trace_strategy(30)) {
        let n = t.n_max();
        let prefix = prefix_vote_curve(&t, TieRule::Fractional);
        let all = enumerated_accuracy(&t, n, TieRule::Fractional).unwrap().to_f64().unwrap();
        prop_assert_eq!(prefix.values[n - 1], all);
    }

    #[test]
    fn policies_never_read_past_their_cap(
        traces in prop::collection::vec(trace_strategy(30), 1..8),
        cap in 1usize..40,
        window in 1usize..6,
    ) {
        let ds = dataset(traces);
        let limit = cap.min(ds.n_max);
        let window = window.min(limit);
        for out in [
            run_ac(&ds, cap, 0.95, TieRule::FirstSeen).unwrap(),
            run_esc(&ds, window, cap, TieRule::FirstSeen).unwrap(),
            run_dsc(&ds, window, 2, cap, TieRule::FirstSeen).unwrap(),
        ] {
            prop_assert!(out.iter().all(|o| o.samples_used >= 1 && o.samples_used <= limit));
            prop_assert!(out.iter().all(|o| (0.0..=1.0).contains(&o.credit)));
        }
        let std = run_std_pt(&ds, limit, TieRule::FirstSeen).unwrap();
        prop_assert!(std.iter().all(|o| o.samples_used == limit && o.rounds_used == 1));
        let t2 = run_t2(&ds, &vec![limit; ds.len()], TieRule::FirstSeen).unwrap();
        prop_assert_eq!(t2, std);
    }

    #[test]
    fn esc_with_unit_window_stops_at_once(traces in prop::collection::vec(trace_strategy(20), 1..6)) {
        let ds = dataset(traces);
        let out = run_esc(&ds, 1, ds.n_max, TieRule::FirstSeen).unwrap();
        prop_assert!(out.iter().all(|o| o.samples_used == 1));
    }

    #[test]
    fn categorical_dp_matches_brute_force(raw in prop::collection::vec(0.05f64..1.0, 2..4), n in 1usize..7) {
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let model = CategoricalAnswerModel::new(p, 0).unwrap();
        let dp = model.exact_mv_accuracy(n, TieRule::Fractional).unwrap();
        let brute = model.exact_mv_accuracy_brute_force(n, TieRule::Fractional).unwrap();
        let first = model.exact_mv_accuracy_brute_force(n, TieRule::FirstSeen).unwrap();
        prop_assert!((dp - brute).abs() < 1e-12);
        prop_assert!((dp - first).abs() < 1e-12);
    }
}

#[test]
fn ac_stops_no_later_when_leader_draws_replace_runner_up() {
    // replacing runner-up draws by leader draws only raises confidence
    let mixed = [0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0];
    let mut purer = mixed;
    purer[3] = 0;
    purer[6] = 0;
    let run = |d: &[usize]| {
        let ds = TraceDataset::new(
            d.len(),
            SamplingConfig::default(),
            vec![QuestionTrace::from_indices("q", Some(0), d).unwrap()],
        )
        .unwrap();
        run_ac(&ds, d.len(), 0.95, TieRule::FirstSeen).unwrap()[0].samples_used
    };
    assert!(run(&purer) <= run(&mixed));
}
