//! Majority voting and per-question budget-accuracy curves.
//!
//! `A_x(N)` is the expected vote credit of a uniformly drawn `N`-subset of
//! the recorded draws. It is estimated three ways:
//!
//! * full enumeration of all `C(N_max, N)` subsets when that is small,
//! * seeded Monte Carlo over `min(tau, C(N_max, N))` subsets otherwise,
//! * a closed-form counting DP over per-answer subset counts (the oracle).

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Key};
use crate::scalar::{binomial_table, binomial_u128, from_usize, Exact, Real, Scalar};
use crate::trace::{answer_counts, AnswerId, QuestionTrace, TraceDataset};

/// Largest subset count that is enumerated exhaustively.
pub const ENUMERATION_CAP: u128 = 200_000;
/// Default Monte-Carlo subset budget per `(question, N)`.
pub const DEFAULT_TAU: u64 = 100_000;
/// Largest answer vocabulary the counting DP accepts.
pub const MAX_EXACT_ANSWERS: usize = 12;

/// How ties between leading answers are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Credit `1/t` when gold is one of `t` tied leaders.
    #[default]
    Fractional,
    /// The tied leader that occurs first wins outright.
    FirstSeen,
}

impl std::str::FromStr for TieRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fractional" => Ok(TieRule::Fractional),
            "first-seen" => Ok(TieRule::FirstSeen),
            other => Err(Error::InvalidArgument(format!("unknown tie rule `{other}`"))),
        }
    }
}

/// Outcome of one vote, kept as an integer so credits can be summed exactly.
/// `0` is a loss; `t >= 1` means gold shares the lead with `t - 1` others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Outcome(u32);

impl Outcome {
    fn credit(self) -> f64 {
        if self.0 == 0 {
            0.0
        } else {
            1.0 / self.0 as f64
        }
    }
}

/// Vote over `counts`; `first_pos[j]` is the first position of answer `j`
/// within the voted sample (only read under `FirstSeen`).
fn outcome(counts: &[u32], first_pos: &[u32], gold: Option<usize>, tie: TieRule) -> Outcome {
    let Some(g) = gold else { return Outcome(0) };
    let top = counts.iter().copied().max().unwrap_or(0);
    if top == 0 || counts[g] != top {
        return Outcome(0);
    }
    match tie {
        TieRule::Fractional => Outcome(counts.iter().filter(|&&c| c == top).count() as u32),
        TieRule::FirstSeen => {
            let leader = (0..counts.len())
                .filter(|&j| counts[j] == top)
                .min_by_key(|&j| first_pos[j])
                .expect("non-empty leader set");
            Outcome((leader == g) as u32)
        }
    }
}

/// Winning answer of a vote. Ties go to the leader seen first.
pub fn vote_winner(answers: &[AnswerId]) -> Option<AnswerId> {
    let m = answers.iter().map(|a| a.index() + 1).max()?;
    let mut counts = vec![0u32; m];
    let mut first = vec![u32::MAX; m];
    for (i, a) in answers.iter().enumerate() {
        counts[a.index()] += 1;
        if first[a.index()] == u32::MAX {
            first[a.index()] = i as u32;
        }
    }
    let top = *counts.iter().max()?;
    (0..m)
        .filter(|&j| counts[j] == top)
        .min_by_key(|&j| first[j])
        .map(AnswerId::from)
}

/// Vote credit of `answers` against `gold`.
pub fn majority_vote(answers: &[AnswerId], gold: Option<AnswerId>, tie: TieRule) -> Result<f64> {
    if answers.is_empty() {
        return Err(Error::Empty("majority_vote needs at least one answer"));
    }
    let m = answers
        .iter()
        .map(|a| a.index() + 1)
        .max()
        .unwrap()
        .max(gold.map_or(0, |g| g.index() + 1));
    let mut counts = vec![0u32; m];
    let mut first = vec![u32::MAX; m];
    for (i, a) in answers.iter().enumerate() {
        counts[a.index()] += 1;
        if first[a.index()] == u32::MAX {
            first[a.index()] = i as u32;
        }
    }
    Ok(outcome(&counts, &first, gold.map(AnswerId::index), tie).credit())
}

/// Parameters of the subsampling estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleParams {
    pub tau: u64,
    pub seed: u64,
    pub tie_rule: TieRule,
}

impl Default for SubsampleParams {
    fn default() -> Self {
        SubsampleParams {
            tau: DEFAULT_TAU,
            seed: 0,
            tie_rule: TieRule::Fractional,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CurveMethod {
    Subsample,
    Exact,
    Prefix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorMeta {
    pub method: CurveMethod,
    pub m_draws: u64,
    pub seed: u64,
}

/// `A_x(N)` for `N = 1..=n_max`; `values[i]` holds `A_x(i + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAccuracyCurve<T = f64> {
    pub values: Vec<T>,
    pub n_max: usize,
    pub estimator_meta: EstimatorMeta,
}

impl<T: Real> BudgetAccuracyCurve<T> {
    /// Wraps raw values (used for hand-built curves and tests).
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("curve needs at least one value"));
        }
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::InvalidArgument("curve values must lie in [0, 1]".into()));
        }
        Ok(BudgetAccuracyCurve {
            n_max: values.len(),
            values,
            estimator_meta: EstimatorMeta {
                method: CurveMethod::Exact,
                m_draws: 0,
                seed: 0,
            },
        })
    }

    /// `A(n)` for 1-based budget `n`.
    #[inline]
    pub fn at(&self, n: usize) -> T {
        self.values[n - 1]
    }
}

/// Visits every `k`-combination of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn hist_to_exact(hist: &[u64], total: u128) -> Exact {
    let mut sum = Exact::zero();
    for (t, &count) in hist.iter().enumerate().skip(1) {
        if count > 0 {
            sum += Exact::new(BigInt::from(count), BigInt::from(t as u64));
        }
    }
    sum / Exact::from_integer(BigInt::from(total))
}

struct TraceView {
    draws: Vec<u32>,
    m: usize,
    gold: Option<usize>,
}

impl TraceView {
    fn new(trace: &QuestionTrace) -> Self {
        TraceView {
            draws: trace.draws.iter().map(|a| a.0).collect(),
            m: trace.num_answers(),
            gold: trace.gold.map(AnswerId::index),
        }
    }
}

/// Enumerates all `n`-subsets; returns the exact mean credit.
fn enumerate_subsets(view: &TraceView, n: usize, tie: TieRule) -> Exact {
    let n_max = view.draws.len();
    let mut hist = vec![0u64; view.m + 1];
    let mut counts = vec![0u32; view.m];
    let mut first = vec![u32::MAX; view.m];
    let mut total: u128 = 0;
    for_each_combination(n_max, n, |subset| {
        counts.iter_mut().for_each(|c| *c = 0);
        first.iter_mut().for_each(|f| *f = u32::MAX);
        for (pos, &i) in subset.iter().enumerate() {
            let a = view.draws[i] as usize;
            counts[a] += 1;
            if first[a] == u32::MAX {
                first[a] = pos as u32;
            }
        }
        hist[outcome(&counts, &first, view.gold, tie).0 as usize] += 1;
        total += 1;
    });
    hist_to_exact(&hist, total)
}

/// Monte-Carlo mean credit over `reps` uniform `n`-subsets.
fn sample_subsets(view: &TraceView, n: usize, reps: u64, tie: TieRule, rng: &mut impl Rng) -> f64 {
    let n_max = view.draws.len();
    let mut perm: Vec<u32> = (0..n_max as u32).collect();
    let mut excluded = vec![false; n_max];
    let mut hist = vec![0u64; view.m + 1];
    let mut counts = vec![0u32; view.m];
    let mut first = vec![u32::MAX; view.m];
    // sample whichever side of the split is smaller
    let complement = n > n_max / 2;
    let k = if complement { n_max - n } else { n };
    let mut full = vec![0u32; view.m];
    view.draws.iter().for_each(|&a| full[a as usize] += 1);
    for _ in 0..reps {
        for i in 0..k {
            let j = rng.random_range(i..n_max);
            perm.swap(i, j);
        }
        if complement && tie == TieRule::Fractional {
            // order is irrelevant: remove the excluded draws from the totals
            counts.copy_from_slice(&full);
            for &p in &perm[..k] {
                counts[view.draws[p as usize] as usize] -= 1;
            }
            hist[outcome(&counts, &first, view.gold, tie).0 as usize] += 1;
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        first.iter_mut().for_each(|f| *f = u32::MAX);
        if complement {
            for &p in &perm[..k] {
                excluded[p as usize] = true;
            }
            let mut pos = 0u32;
            for (i, &a) in view.draws.iter().enumerate() {
                if excluded[i] {
                    excluded[i] = false;
                    continue;
                }
                counts[a as usize] += 1;
                if first[a as usize] == u32::MAX {
                    first[a as usize] = pos;
                }
                pos += 1;
            }
        } else {
            let chosen = &mut perm[..k];
            if tie == TieRule::FirstSeen {
                chosen.sort_unstable();
            }
            for (pos, &p) in chosen.iter().enumerate() {
                let a = view.draws[p as usize] as usize;
                counts[a] += 1;
                if first[a] == u32::MAX {
                    first[a] = pos as u32;
                }
            }
        }
        hist[outcome(&counts, &first, view.gold, tie).0 as usize] += 1;
    }
    let sum: f64 = hist
        .iter()
        .enumerate()
        .skip(1)
        .map(|(t, &c)| c as f64 / t as f64)
        .sum();
    sum / reps as f64
}

/// Whether [`subsample_accuracy`] enumerates at budget `n`.
pub fn uses_enumeration(n_max: usize, n: usize, tau: u64) -> bool {
    binomial_u128(n_max, n) <= (tau as u128).min(ENUMERATION_CAP)
}

/// Subsampling estimate of `A_x(n)`: mean vote credit over
/// `M = min(tau, C(N_max, n))` uniform `n`-subsets drawn without replacement.
pub fn subsample_accuracy(trace: &QuestionTrace, n: usize, params: &SubsampleParams) -> Result<f64> {
    let n_max = trace.n_max();
    if n == 0 || n > n_max {
        return Err(Error::out_of_range("n", n, 1, n_max));
    }
    if params.tau == 0 {
        return Err(Error::InvalidArgument("tau must be at least 1".into()));
    }
    let view = TraceView::new(trace);
    if view.gold.is_none() {
        return Ok(0.0);
    }
    if uses_enumeration(n_max, n, params.tau) {
        return Ok(enumerate_subsets(&view, n, params.tie_rule).to_f64().unwrap_or(f64::NAN));
    }
    let reps = (params.tau as u128).min(binomial_u128(n_max, n)) as u64;
    let mut rng = rng::stream(params.seed, &[Key::Str(&trace.question_id), Key::Int(n as u64)]);
    Ok(sample_subsets(&view, n, reps, params.tie_rule, &mut rng))
}

/// Exact `A_x(n)` by enumeration or, above the cap, by the counting DP.
/// Returned as a rational so both routes can be compared without rounding.
pub fn enumerated_accuracy(trace: &QuestionTrace, n: usize, tie: TieRule) -> Result<Exact> {
    let n_max = trace.n_max();
    if n == 0 || n > n_max {
        return Err(Error::out_of_range("n", n, 1, n_max));
    }
    if binomial_u128(n_max, n) > ENUMERATION_CAP {
        return Err(Error::Infeasible(format!("C({n_max}, {n}) exceeds the enumeration cap")));
    }
    Ok(enumerate_subsets(&TraceView::new(trace), n, tie))
}

/// Weighted counts of the non-gold answers, indexed by
/// `(subset size, max count, number of answers at the max)`.
struct OtherCounts<T> {
    cap: usize,
    m: usize,
    ways: Vec<T>,
}

impl<T: Scalar> OtherCounts<T> {
    #[inline]
    fn idx(&self, s: usize, mx: usize, mult: usize) -> usize {
        (s * (self.cap + 1) + mx) * self.m + mult
    }

    /// `weight(j, k)` is the weight of drawing `k` copies of answer `j`
    /// given `s` already placed items (passed as the third argument).
    fn build(others: &[usize], cap: usize, weight: impl Fn(usize, usize, usize) -> T) -> Self {
        let m = others.len() + 1;
        let mut dp = OtherCounts {
            cap,
            m,
            ways: vec![T::zero(); (cap + 1) * (cap + 1) * m],
        };
        let i0 = dp.idx(0, 0, 0);
        dp.ways[i0] = T::one();
        let mut filled = 0usize;
        for (j, &c) in others.iter().enumerate() {
            let mut next = vec![T::zero(); dp.ways.len()];
            for s in 0..=filled.min(cap) {
                for mx in 0..=s {
                    for mult in 0..m {
                        let w = &dp.ways[dp.idx(s, mx, mult)];
                        if w.is_zero() {
                            continue;
                        }
                        for k in 0..=c.min(cap - s) {
                            let (nmx, nmult) = if k > mx {
                                (k, 1)
                            } else if k == mx && k > 0 {
                                (mx, mult + 1)
                            } else {
                                (mx, mult)
                            };
                            let ni = dp.idx(s + k, nmx, nmult);
                            next[ni] = next[ni].clone() + w.clone() * weight(j, k, s);
                        }
                    }
                }
            }
            filled += c;
            dp.ways = next;
        }
        dp
    }

    /// Sum of `ways * credit` over states of size `s` against a gold count `t`.
    fn credited(&self, s: usize, t: usize) -> T {
        let mut acc = T::zero();
        for mx in 0..=s {
            for mult in 0..self.m {
                let w = &self.ways[self.idx(s, mx, mult)];
                if w.is_zero() {
                    continue;
                }
                if t > mx {
                    acc = acc + w.clone();
                } else if t == mx && t > 0 {
                    acc = acc + w.clone() / from_usize::<T>(mult + 1);
                }
            }
        }
        acc
    }
}

fn check_counts(counts: &[usize], gold: Option<usize>) -> Result<usize> {
    if counts.is_empty() {
        return Err(Error::Empty("answer counts"));
    }
    if counts.len() > MAX_EXACT_ANSWERS {
        return Err(Error::Infeasible(format!(
            "{} distinct answers exceeds the exact bound of {MAX_EXACT_ANSWERS}",
            counts.len()
        )));
    }
    if let Some(g) = gold {
        if g >= counts.len() {
            return Err(Error::InvalidArgument(format!("gold index {g} outside count vector")));
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("counts sum to zero".into()));
    }
    Ok(total)
}

/// Exact `A_x(n)` for every `n = 1..=max_n` from the answer counts alone.
///
/// For each gold count `t` in the subset the DP accumulates
/// `C(c_gold, t) * sum over the other answers' counts` partitioned by the
/// largest other count and how many answers reach it, then divides by
/// `C(N_max, n)`. Only the fractional tie rule is a function of counts;
/// first-seen scoring depends on draw order and is rejected.
pub fn exact_subset_curve<T: Scalar>(
    counts: &[usize],
    gold: Option<usize>,
    max_n: usize,
    tie: TieRule,
) -> Result<Vec<T>> {
    let total = check_counts(counts, gold)?;
    if max_n == 0 || max_n > total {
        return Err(Error::out_of_range("n", max_n, 1, total));
    }
    if tie != TieRule::Fractional {
        return Err(Error::InvalidArgument(
            "first-seen credit depends on draw order; the count DP supports the fractional rule only".into(),
        ));
    }
    let Some(g) = gold else {
        return Ok(vec![T::zero(); max_n]);
    };
    let binom = binomial_table::<T>(total);
    let others: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != g)
        .map(|(_, &c)| c)
        .collect();
    let dp = OtherCounts::build(&others, max_n, |j, k, _| binom[others[j]][k].clone());
    let cg = counts[g];
    let other_total = total - cg;
    Ok((1..=max_n)
        .map(|n| {
            let lo = n.saturating_sub(other_total);
            let acc = (lo..=cg.min(n)).fold(T::zero(), |acc, t| {
                let inner = dp.credited(n - t, t);
                if inner.is_zero() {
                    acc
                } else {
                    acc + binom[cg][t].clone() * inner
                }
            });
            acc / binom[total][n].clone()
        })
        .collect())
}

/// Exact expected credit of a uniform `n`-subset given the answer counts.
pub fn exact_subset_accuracy<T: Scalar>(counts: &[usize], gold: Option<usize>, n: usize, tie: TieRule) -> Result<T> {
    let total = check_counts(counts, gold)?;
    if n == 0 || n > total {
        return Err(Error::out_of_range("n", n, 1, total));
    }
    let mut curve = exact_subset_curve::<T>(counts, gold, n, tie)?;
    Ok(curve.pop().expect("non-empty curve"))
}

/// Weighted counting DP shared with the i.i.d. categorical model: draws of
/// the non-gold answers are interleaved, so adding `k` copies to `s`
/// placed items multiplies by `C(s + k, k) * p_j^k`.
pub(crate) fn multinomial_vote_accuracy<T: Scalar>(p: &[T], gold: usize, n: usize) -> T {
    let binom = binomial_table::<T>(n);
    let others: Vec<T> = p
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != gold)
        .map(|(_, v)| v.clone())
        .collect();
    let mut powers: Vec<Vec<T>> = Vec::with_capacity(others.len());
    for q in &others {
        let mut row = Vec::with_capacity(n + 1);
        let mut acc = T::one();
        for _ in 0..=n {
            row.push(acc.clone());
            acc = acc * q.clone();
        }
        powers.push(row);
    }
    let counts = vec![n; others.len()];
    let dp = OtherCounts::build(&counts, n, |j, k, s| binom[s + k][k].clone() * powers[j][k].clone());
    let pg = p[gold].clone();
    let mut pg_pow = Vec::with_capacity(n + 1);
    let mut acc = T::one();
    for _ in 0..=n {
        pg_pow.push(acc.clone());
        acc = acc * pg.clone();
    }
    let mut total = T::zero();
    for t in 1..=n {
        let inner = dp.credited(n - t, t);
        if !inner.is_zero() {
            total = total + binom[n][t].clone() * pg_pow[t].clone() * inner;
        }
    }
    total
}

/// Curve by the subsampling estimator for `N = 1..=N_max`.
pub fn budget_accuracy_curve(trace: &QuestionTrace, params: &SubsampleParams) -> Result<BudgetAccuracyCurve> {
    let n_max = trace.n_max();
    let values = (1..=n_max)
        .into_par_iter()
        .map(|n| subsample_accuracy(trace, n, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(BudgetAccuracyCurve {
        values,
        n_max,
        estimator_meta: EstimatorMeta {
            method: CurveMethod::Subsample,
            m_draws: params.tau,
            seed: params.seed,
        },
    })
}

/// Curve by the counting DP; requires the fractional tie rule.
pub fn exact_budget_accuracy_curve(trace: &QuestionTrace, tie: TieRule) -> Result<BudgetAccuracyCurve> {
    let counts = answer_counts(trace);
    let values = exact_subset_curve::<f64>(&counts, trace.gold.map(AnswerId::index), trace.n_max(), tie)?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(BudgetAccuracyCurve {
        values,
        n_max: trace.n_max(),
        estimator_meta: EstimatorMeta {
            method: CurveMethod::Exact,
            m_draws: 0,
            seed: 0,
        },
    })
}

/// Credit of voting over the first `n` recorded draws, for every `n`.
/// This is the curve a replayed policy actually experiences.
pub fn prefix_vote_curve(trace: &QuestionTrace, tie: TieRule) -> BudgetAccuracyCurve {
    let m = trace.num_answers();
    let gold = trace.gold.map(AnswerId::index);
    let mut counts = vec![0u32; m];
    let mut first = vec![u32::MAX; m];
    let values = trace
        .draws
        .iter()
        .enumerate()
        .map(|(i, a)| {
            counts[a.index()] += 1;
            if first[a.index()] == u32::MAX {
                first[a.index()] = i as u32;
            }
            outcome(&counts, &first, gold, tie).credit()
        })
        .collect();
    BudgetAccuracyCurve {
        values,
        n_max: trace.n_max(),
        estimator_meta: EstimatorMeta {
            method: CurveMethod::Prefix,
            m_draws: 1,
            seed: 0,
        },
    }
}

/// Curves for a whole dataset, in trace order. `exact` selects the DP
/// when every trace is within its bounds.
pub fn dataset_curves(dataset: &TraceDataset, params: &SubsampleParams, exact: bool) -> Result<Vec<BudgetAccuracyCurve>> {
    dataset
        .traces
        .par_iter()
        .map(|t| {
            if exact {
                exact_budget_accuracy_curve(t, params.tie_rule)
            } else {
                budget_accuracy_curve(t, params)
            }
        })
        .collect()
}

/// CSV with header `question_id,N,accuracy`, one row per `(question, N)`.
pub fn curves_to_csv<T: Real + std::fmt::Display>(ids: &[&str], curves: &[BudgetAccuracyCurve<T>]) -> String {
    let mut out = String::from("question_id,N,accuracy\n");
    for (id, c) in ids.iter().zip(curves) {
        for (i, v) in c.values.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", csv_field(id), i + 1, v));
        }
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[usize]) -> Vec<AnswerId> {
        v.iter().map(|&x| AnswerId::from(x)).collect()
    }

    #[test]
    fn majority_vote_examples() {
        let g = Some(AnswerId(0));
        assert_eq!(majority_vote(&ids(&[0, 0, 1]), g, TieRule::Fractional).unwrap(), 1.0);
        assert_eq!(majority_vote(&ids(&[0, 1]), g, TieRule::Fractional).unwrap(), 0.5);
        assert_eq!(majority_vote(&ids(&[0, 1, 1, 2, 2]), Some(AnswerId(2)), TieRule::FirstSeen).unwrap(), 0.0);
        assert_eq!(majority_vote(&ids(&[0, 1, 1, 2, 2]), Some(AnswerId(1)), TieRule::FirstSeen).unwrap(), 1.0);
        assert_eq!(majority_vote(&ids(&[0, 0]), None, TieRule::Fractional).unwrap(), 0.0);
        assert!(majority_vote(&[], g, TieRule::Fractional).is_err());
    }

    #[test]
    fn combinations_are_complete() {
        let mut n = 0;
        for_each_combination(6, 3, |c| {
            assert!(c.windows(2).all(|w| w[0] < w[1]));
            n += 1;
        });
        assert_eq!(n, 20);
        let mut n = 0;
        for_each_combination(4, 4, |_| n += 1);
        assert_eq!(n, 1);
    }

    #[test]
    fn subsample_small_examples() {
        let t = QuestionTrace::from_indices("q", Some(0), &[0, 0, 1]).unwrap();
        let p = SubsampleParams::default();
        assert_eq!(subsample_accuracy(&t, 1, &p).unwrap(), 2.0 / 3.0);
        assert_eq!(subsample_accuracy(&t, 3, &p).unwrap(), 1.0);
        assert!(subsample_accuracy(&t, 0, &p).is_err());
        assert!(subsample_accuracy(&t, 4, &p).is_err());
    }

    #[test]
    fn exact_dp_small_examples() {
        let v: f64 = exact_subset_accuracy(&[2, 1], Some(0), 2, TieRule::Fractional).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        let v: Exact = exact_subset_accuracy(&[2, 1], Some(0), 2, TieRule::Fractional).unwrap();
        assert_eq!(v, Exact::new(2.into(), 3.into()));
        for n in 1..=5 {
            let v: f64 = exact_subset_accuracy(&[5], Some(0), n, TieRule::Fractional).unwrap();
            assert_eq!(v, 1.0);
        }
        assert!(exact_subset_accuracy::<f64>(&[1; 13], Some(0), 2, TieRule::Fractional).is_err());
        assert!(exact_subset_accuracy::<f64>(&[2, 1], Some(0), 4, TieRule::Fractional).is_err());
        assert!(exact_subset_accuracy::<f64>(&[2, 1], Some(0), 2, TieRule::FirstSeen).is_err());
    }

    #[test]
    fn curve_three_gold_one_other() {
        let t = QuestionTrace::from_indices("q", Some(0), &[0, 1, 0, 0]).unwrap();
        let c = budget_accuracy_curve(&t, &SubsampleParams::default()).unwrap();
        assert_eq!(c.values[0], 0.75);
        assert_eq!(c.values[2], 1.0);
        let e = exact_budget_accuracy_curve(&t, TieRule::Fractional).unwrap();
        assert_eq!(e.values[0], 0.75);
        assert_eq!(e.values[2], 1.0);
    }

    #[test]
    fn absent_gold_and_all_gold_curves() {
        let t = QuestionTrace::from_indices("q", None, &[0, 1, 1, 0, 2, 2, 0, 1]).unwrap();
        let c = budget_accuracy_curve(&t, &SubsampleParams::default()).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        let t = QuestionTrace::from_indices("q", Some(0), &[0; 8]).unwrap();
        let c = budget_accuracy_curve(&t, &SubsampleParams::default()).unwrap();
        assert_eq!(c.values, vec![1.0; 8]);
    }

    #[test]
    fn prefix_curve_follows_recorded_order() {
        let t = QuestionTrace::from_indices("q", Some(1), &[0, 1, 1, 0, 0]).unwrap();
        let c = prefix_vote_curve(&t, TieRule::FirstSeen);
        assert_eq!(c.values, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let c = prefix_vote_curve(&t, TieRule::Fractional);
        assert_eq!(c.values, vec![0.0, 0.5, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn winner_prefers_first_seen() {
        assert_eq!(vote_winner(&ids(&[2, 1, 1, 2])), Some(AnswerId(2)));
        assert_eq!(vote_winner(&[]), None);
    }

    #[test]
    fn csv_layout() {
        let c = BudgetAccuracyCurve::from_values(vec![0.5, 1.0]).unwrap();
        assert_eq!(curves_to_csv(&["a,b"], &[c]), "question_id,N,accuracy\n\"a,b\",1,0.5\n\"a,b\",2,1\n");
    }
}
