//! Replay of budget-allocation policies over recorded traces.
//!
//! Draw `i` of a trace stands for the `i`-th decode, so every policy sees
//! the same randomness. Costs are proxied by samples (memory) and
//! sequential rounds (latency).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::sample_optimal_n;
use crate::trace::{answer_counts, AnswerId, QuestionTrace, TraceDataset};
use crate::vote::{majority_vote, vote_winner, BudgetAccuracyCurve, TieRule};

/// Budget cap of the adaptive policies in their original configuration.
pub const DEFAULT_MAX_BUDGET: usize = 40;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.95;
pub const DEFAULT_ESC_WINDOW: usize = 5;
pub const DEFAULT_DSC_WINDOW: usize = 4;
pub const DEFAULT_DSC_K: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub question_id: String,
    pub final_answer: Option<AnswerId>,
    pub credit: f64,
    pub samples_used: usize,
    /// Sequential decode batches.
    pub rounds_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mean_samples: f64,
    pub mean_rounds: f64,
    pub c_mem_proxy: f64,
    pub c_time_proxy: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    StdPt,
    Oracle,
    Ac,
    Esc,
    Dsc,
    T2,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::StdPt,
        PolicyKind::Oracle,
        PolicyKind::Ac,
        PolicyKind::Esc,
        PolicyKind::Dsc,
        PolicyKind::T2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::StdPt => "std-pt",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Ac => "ac",
            PolicyKind::Esc => "esc",
            PolicyKind::Dsc => "dsc",
            PolicyKind::T2 => "t2",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy `{s}`")))
    }
}

/// Outcome of voting over the first `used` draws.
fn settle(trace: &QuestionTrace, used: usize, rounds: usize, tie: TieRule) -> PolicyOutcome {
    let prefix = &trace.draws[..used];
    PolicyOutcome {
        question_id: trace.question_id.clone(),
        final_answer: vote_winner(prefix),
        credit: majority_vote(prefix, trace.gold, tie).expect("non-empty prefix"),
        samples_used: used,
        rounds_used: rounds,
    }
}

/// Outcome whose answer is fixed by the policy rather than by a vote.
fn settle_on(trace: &QuestionTrace, answer: AnswerId, used: usize, rounds: usize) -> PolicyOutcome {
    PolicyOutcome {
        question_id: trace.question_id.clone(),
        final_answer: Some(answer),
        credit: (trace.gold == Some(answer)) as u8 as f64,
        samples_used: used,
        rounds_used: rounds,
    }
}

fn unanimous(block: &[AnswerId]) -> Option<AnswerId> {
    let first = *block.first()?;
    block.iter().all(|&a| a == first).then_some(first)
}

fn require_positive(what: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::out_of_range(what, 0, 1, usize::MAX))
    } else {
        Ok(())
    }
}

/// Every question votes over its first `n` draws in one batch.
pub fn run_std_pt(dataset: &TraceDataset, n: usize, tie: TieRule) -> Result<Vec<PolicyOutcome>> {
    if n == 0 || n > dataset.n_max {
        return Err(Error::out_of_range("n", n, 1, dataset.n_max));
    }
    Ok(dataset.traces.par_iter().map(|t| settle(t, n, 1, tie)).collect())
}

/// Every question uses its own optimal budget read from `curves`.
pub fn run_oracle(
    dataset: &TraceDataset,
    curves: &[BudgetAccuracyCurve],
    eps_acc: f64,
    tie: TieRule,
) -> Result<Vec<PolicyOutcome>> {
    if curves.len() != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "oracle needs one curve per question ({} curves for {} questions)",
            curves.len(),
            dataset.len()
        )));
    }
    dataset
        .traces
        .par_iter()
        .zip(curves)
        .map(|(t, c)| {
            if c.values.len() != t.n_max() {
                return Err(Error::DimensionMismatch {
                    expected: t.n_max(),
                    got: c.values.len(),
                });
            }
            Ok(settle(t, sample_optimal_n(c, eps_acc).n_star, 1, tie))
        })
        .collect()
}

/// Adaptive consistency: one draw per round until the Beta posterior of
/// the leader beating the runner-up reaches `conf_threshold`.
pub fn run_ac(dataset: &TraceDataset, max_budget: usize, conf_threshold: f64, tie: TieRule) -> Result<Vec<PolicyOutcome>> {
    require_positive("max_budget", max_budget)?;
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::InvalidArgument(format!(
            "confidence threshold {conf_threshold} outside [0, 1]"
        )));
    }
    let cap = max_budget.min(dataset.n_max);
    Ok(dataset
        .traces
        .par_iter()
        .map(|t| {
            let mut counts = vec![0usize; t.num_answers()];
            let mut used = cap;
            for (i, a) in t.draws[..cap].iter().enumerate() {
                counts[a.index()] += 1;
                let (v1, v2) = top_two(&counts);
                if leader_confidence(v1, v2) >= conf_threshold {
                    used = i + 1;
                    break;
                }
            }
            settle(t, used, used, tie)
        })
        .collect())
}

fn top_two(counts: &[usize]) -> (usize, usize) {
    counts.iter().fold((0, 0), |(a, b), &c| {
        if c > a {
            (c, a)
        } else if c > b {
            (a, c)
        } else {
            (a, b)
        }
    })
}

/// `I_{1/2}(v2 + 1, v1 + 1)`: posterior mass of the runner-up's share
/// lying below one half.
pub fn leader_confidence(v1: usize, v2: usize) -> f64 {
    statrs::function::beta::beta_reg(v2 as f64 + 1.0, v1 as f64 + 1.0, 0.5)
}

/// Early-stopping self-consistency: windows of `window` draws until one is
/// unanimous, else a vote over the whole budget.
pub fn run_esc(dataset: &TraceDataset, window: usize, max_budget: usize, tie: TieRule) -> Result<Vec<PolicyOutcome>> {
    require_positive("window", window)?;
    if max_budget < window {
        return Err(Error::InvalidArgument(format!(
            "max_budget {max_budget} must be at least the window {window}"
        )));
    }
    let cap = max_budget.min(dataset.n_max);
    Ok(dataset
        .traces
        .par_iter()
        .map(|t| {
            let mut pos = 0;
            let mut rounds = 0;
            while pos < cap {
                let end = (pos + window).min(cap);
                rounds += 1;
                if let Some(a) = unanimous(&t.draws[pos..end]) {
                    return settle_on(t, a, end, rounds);
                }
                pos = end;
            }
            settle(t, cap, rounds, tie)
        })
        .collect())
}

/// Per-question difficulty: the recorded field, else one minus the
/// leader's share of the full trace.
pub fn difficulty(trace: &QuestionTrace) -> f64 {
    trace.difficulty.unwrap_or_else(|| {
        let top = answer_counts(trace).into_iter().max().unwrap_or(0);
        1.0 - top as f64 / trace.n_max() as f64
    })
}

/// Difficulty-adaptive self-consistency.
///
/// Questions are scanned hardest first with one `window` block each; the
/// scan stops after `k_consecutive` unanimous blocks in a row. Questions
/// past that point answer with a single draw. The rest keep doubling their
/// cumulative budget until the newest chunk is unanimous or the cap is hit.
pub fn run_dsc(
    dataset: &TraceDataset,
    window: usize,
    k_consecutive: usize,
    max_budget: usize,
    tie: TieRule,
) -> Result<Vec<PolicyOutcome>> {
    require_positive("window", window)?;
    require_positive("k_consecutive", k_consecutive)?;
    require_positive("max_budget", max_budget)?;
    let cap = max_budget.min(dataset.n_max);
    let block = window.min(cap);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let diff: Vec<f64> = dataset.traces.iter().map(difficulty).collect();
    order.sort_by(|&a, &b| diff[b].total_cmp(&diff[a]).then(a.cmp(&b)));

    let mut scanned = vec![false; dataset.len()];
    let mut run = 0;
    for &q in &order {
        scanned[q] = true;
        if unanimous(&dataset.traces[q].draws[..block]).is_some() {
            run += 1;
            if run == k_consecutive {
                break;
            }
        } else {
            run = 0;
        }
    }

    Ok(dataset
        .traces
        .par_iter()
        .zip(&scanned)
        .map(|(t, &in_scan)| {
            if !in_scan {
                return settle(t, 1, 1, tie);
            }
            let (mut lo, mut hi) = (0, block);
            while unanimous(&t.draws[lo..hi]).is_none() && hi < cap {
                (lo, hi) = (hi, (2 * hi).min(cap));
            }
            settle(t, hi, hi.div_ceil(window), tie)
        })
        .collect())
}

/// Budgets fixed before decoding: a single batch of `estimates[i]` draws.
pub fn run_t2(dataset: &TraceDataset, estimates: &[usize], tie: TieRule) -> Result<Vec<PolicyOutcome>> {
    if estimates.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: estimates.len(),
        });
    }
    if let Some(&bad) = estimates.iter().find(|&&n| n == 0 || n > dataset.n_max) {
        return Err(Error::out_of_range("estimate", bad, 1, dataset.n_max));
    }
    Ok(dataset
        .traces
        .par_iter()
        .zip(estimates)
        .map(|(t, &n)| settle(t, n, 1, tie))
        .collect())
}

/// Mean costs and accuracy of `outcomes`, with ratios against `baseline`.
pub fn cost_report(outcomes: &[PolicyOutcome], baseline: &[PolicyOutcome]) -> Result<CostReport> {
    if outcomes.is_empty() {
        return Err(Error::Empty("cost report needs outcomes"));
    }
    let mut a: Vec<&str> = outcomes.iter().map(|o| o.question_id.as_str()).collect();
    let mut b: Vec<&str> = baseline.iter().map(|o| o.question_id.as_str()).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::InvalidArgument("outcome and baseline question sets differ".into()));
    }
    let mean = |os: &[PolicyOutcome], f: fn(&PolicyOutcome) -> f64| os.iter().map(f).sum::<f64>() / os.len() as f64;
    let mean_samples = mean(outcomes, |o| o.samples_used as f64);
    let mean_rounds = mean(outcomes, |o| o.rounds_used as f64);
    Ok(CostReport {
        mean_samples,
        mean_rounds,
        c_mem_proxy: mean_samples / mean(baseline, |o| o.samples_used as f64),
        c_time_proxy: mean_rounds / mean(baseline, |o| o.rounds_used as f64),
        accuracy: mean(outcomes, |o| o.credit),
    })
}

/// CSV `question_id,final_answer,credit,samples_used,rounds_used`.
pub fn outcomes_to_csv(outcomes: &[PolicyOutcome]) -> String {
    let mut out = String::from("question_id,final_answer,credit,samples_used,rounds_used\n");
    for o in outcomes {
        let answer = o.final_answer.map(|a| a.0.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            crate::vote::csv_field(&o.question_id),
            answer,
            o.credit,
            o.samples_used,
            o.rounds_used
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::SamplingConfig;

    fn dataset(rows: &[(Option<usize>, &[usize])]) -> TraceDataset {
        let n_max = rows[0].1.len();
        let traces = rows
            .iter()
            .enumerate()
            .map(|(i, (g, d))| QuestionTrace::from_indices(format!("q{i}"), *g, d).unwrap())
            .collect();
        TraceDataset::new(n_max, SamplingConfig::default(), traces).unwrap()
    }

    fn alternating(n: usize) -> Vec<usize> {
        (0..n).map(|i| i % 2).collect()
    }

    #[test]
    fn std_pt_prefixes() {
        let ds = dataset(&[(Some(1), &[0, 1, 1, 0])]);
        assert_eq!(run_std_pt(&ds, 1, TieRule::FirstSeen).unwrap()[0].credit, 0.0);
        assert_eq!(run_std_pt(&ds, 3, TieRule::FirstSeen).unwrap()[0].credit, 1.0);
        // 2-2 tie at n = 4: answer 0 seen first
        let o = &run_std_pt(&ds, 4, TieRule::FirstSeen).unwrap()[0];
        assert_eq!((o.credit, o.final_answer), (0.0, Some(AnswerId(0))));
        assert_eq!(run_std_pt(&ds, 4, TieRule::Fractional).unwrap()[0].credit, 0.5);
        assert!(run_std_pt(&ds, 5, TieRule::FirstSeen).is_err());
        assert!(run_std_pt(&ds, 0, TieRule::FirstSeen).is_err());
    }

    #[test]
    fn ac_closed_forms() {
        assert!((leader_confidence(4, 0) - 0.96875).abs() < 1e-12);
        assert!((leader_confidence(3, 0) - 0.9375).abs() < 1e-12);
        assert!((leader_confidence(7, 7) - 0.5).abs() < 1e-12);
        let ds = dataset(&[(Some(0), &[0; 50]), (Some(0), &alternating(50))]);
        let out = run_ac(&ds, 40, 0.95, TieRule::FirstSeen).unwrap();
        assert_eq!((out[0].samples_used, out[0].rounds_used), (4, 4));
        assert_eq!(out[1].samples_used, 40);
        let short = run_ac(&ds, 3, 0.95, TieRule::FirstSeen).unwrap();
        assert_eq!(short[0].samples_used, 3);
    }

    #[test]
    fn esc_windows() {
        let ds = dataset(&[(Some(0), &[0; 48]), (Some(0), &alternating(48))]);
        let out = run_esc(&ds, 5, 40, TieRule::FirstSeen).unwrap();
        assert_eq!((out[0].samples_used, out[0].rounds_used, out[0].credit), (5, 1, 1.0));
        assert_eq!((out[1].samples_used, out[1].rounds_used), (40, 8));
        let out = run_esc(&ds, 1, 40, TieRule::FirstSeen).unwrap();
        assert!(out.iter().all(|o| o.samples_used == 1));
        assert!(run_esc(&ds, 5, 4, TieRule::FirstSeen).is_err());
        // partial final window: 42 = 5 * 8 + 2
        let out = run_esc(&ds, 5, 42, TieRule::FirstSeen).unwrap();
        assert_eq!((out[1].samples_used, out[1].rounds_used), (42, 9));
    }

    #[test]
    fn dsc_stops_scan_after_k_unanimous() {
        let rows: Vec<(Option<usize>, &[usize])> = (0..10).map(|_| (Some(0), &[0usize; 16][..])).collect();
        let ds = dataset(&rows);
        let out = run_dsc(&ds, 4, 3, 40, TieRule::FirstSeen).unwrap();
        let full = out.iter().filter(|o| o.samples_used == 4).count();
        let single = out.iter().filter(|o| o.samples_used == 1).count();
        assert_eq!((full, single), (3, 7));
    }

    #[test]
    fn dsc_doubles_without_unanimity() {
        let alt = alternating(40);
        let ds = dataset(&[(Some(0), &alt), (Some(1), &alt)]);
        let out = run_dsc(&ds, 4, 32, 40, TieRule::FirstSeen).unwrap();
        // budgets 4 -> 8 -> 16 -> 32 -> 40
        assert!(out.iter().all(|o| o.samples_used == 40 && o.rounds_used == 10));
    }

    #[test]
    fn t2_and_cost_report() {
        let ds = dataset(&[(Some(0), &[0, 1, 0, 0]), (Some(1), &[0, 1, 1, 1])]);
        let t2 = run_t2(&ds, &[1, 3], TieRule::FirstSeen).unwrap();
        assert!(t2.iter().all(|o| o.rounds_used == 1));
        assert!(run_t2(&ds, &[1, 5], TieRule::FirstSeen).is_err());
        assert!(run_t2(&ds, &[1], TieRule::FirstSeen).is_err());
        let base = run_std_pt(&ds, 4, TieRule::FirstSeen).unwrap();
        let self_report = cost_report(&base, &base).unwrap();
        assert_eq!((self_report.c_mem_proxy, self_report.c_time_proxy), (1.0, 1.0));
        let r = cost_report(&t2, &base).unwrap();
        assert_eq!((r.mean_samples, r.c_mem_proxy, r.accuracy), (2.0, 0.5, 1.0));
        assert!(cost_report(&t2[..1], &base).is_err());
    }

    #[test]
    fn csv_layout() {
        let ds = dataset(&[(Some(0), &[0, 1])]);
        let csv = outcomes_to_csv(&run_std_pt(&ds, 1, TieRule::FirstSeen).unwrap());
        assert_eq!(csv, "question_id,final_answer,credit,samples_used,rounds_used\nq0,0,1,1,1\n");
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("best".parse::<PolicyKind>().is_err());
    }
}
