//! Categorical answer-distribution model of a single question and
//! synthetic dataset construction with planted sample types.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Key};
use crate::scalar::{from_usize, to_f64, Scalar};
use crate::taxonomy::SampleType;
use crate::trace::{AnswerId, QuestionTrace, SamplingConfig, TraceDataset};
use crate::vote::{multinomial_vote_accuracy, TieRule};

/// Bounds of the multinomial DP.
pub const DP_MAX_ANSWERS: usize = 8;
pub const DP_MAX_N: usize = 64;
/// Largest `m^n` the brute-force route enumerates.
pub const BRUTE_FORCE_MAX_OUTCOMES: u64 = 5_000_000;

/// Answer probabilities `p` over `m` canonical answers, gold at `gold_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalAnswerModel<T = f64> {
    pub p: Vec<T>,
    pub gold_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginStats<T = f64> {
    /// Gold probability minus the strongest competitor.
    pub margin: T,
    /// Top-1 minus top-2 probability.
    pub gap: T,
}

impl<T: Scalar> CategoricalAnswerModel<T> {
    pub fn new(p: Vec<T>, gold_index: usize) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        if gold_index >= p.len() {
            return Err(Error::out_of_range("gold_index", gold_index, 0, p.len() - 1));
        }
        if p.iter().any(|x| *x < T::zero()) {
            return Err(Error::InvalidArgument("probabilities must be non-negative".into()));
        }
        let total = p.iter().fold(T::zero(), |a, b| a + b.clone());
        if (to_f64(&total) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {}, not 1",
                to_f64(&total)
            )));
        }
        Ok(CategoricalAnswerModel { p, gold_index })
    }

    pub fn num_answers(&self) -> usize {
        self.p.len()
    }

    pub fn margin_stats(&self) -> MarginStats<T> {
        if self.p.len() == 1 {
            return MarginStats {
                margin: T::one(),
                gap: T::one(),
            };
        }
        let g = self.gold_index;
        let competitor = self
            .p
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != g)
            .map(|(_, v)| v.clone())
            .reduce(|a, b| if b > a { b } else { a })
            .unwrap();
        let mut sorted = self.p.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("comparable probabilities"));
        MarginStats {
            margin: self.p[g].clone() - competitor,
            gap: sorted[0].clone() - sorted[1].clone(),
        }
    }

    /// Exact probability (expected credit) that the vote over `n` i.i.d.
    /// draws selects the gold answer.
    ///
    /// With i.i.d. draws, every arrangement of a given count vector is
    /// equally likely, so the tied leader seen first is uniform among the
    /// tied ones and both tie rules have the same expectation.
    pub fn exact_mv_accuracy(&self, n: usize, _tie: TieRule) -> Result<T> {
        if n == 0 {
            return Err(Error::out_of_range("n", 0, 1, DP_MAX_N));
        }
        if self.p.len() > DP_MAX_ANSWERS || n > DP_MAX_N {
            return Err(Error::Infeasible(format!(
                "multinomial DP bounded by m <= {DP_MAX_ANSWERS}, n <= {DP_MAX_N} (got m = {}, n = {n})",
                self.p.len()
            )));
        }
        Ok(multinomial_vote_accuracy(&self.p, self.gold_index, n))
    }

    /// Same quantity by enumerating all `m^n` outcome sequences.
    pub fn exact_mv_accuracy_brute_force(&self, n: usize, tie: TieRule) -> Result<T> {
        let m = self.p.len();
        if n == 0 {
            return Err(Error::out_of_range("n", 0, 1, usize::MAX));
        }
        let outcomes = (m as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
        if outcomes > BRUTE_FORCE_MAX_OUTCOMES {
            return Err(Error::Infeasible(format!("{m}^{n} outcomes exceed the brute-force bound")));
        }
        let mut seq = vec![0usize; n];
        let mut total = T::zero();
        let mut counts = vec![0usize; m];
        let mut first = vec![usize::MAX; m];
        loop {
            counts.iter_mut().for_each(|c| *c = 0);
            first.iter_mut().for_each(|f| *f = usize::MAX);
            let mut prob = T::one();
            for (i, &a) in seq.iter().enumerate() {
                counts[a] += 1;
                if first[a] == usize::MAX {
                    first[a] = i;
                }
                prob = prob * self.p[a].clone();
            }
            let top = *counts.iter().max().unwrap();
            if counts[self.gold_index] == top && !prob.is_zero() {
                let tied: Vec<usize> = (0..m).filter(|&j| counts[j] == top).collect();
                let credit = match tie {
                    TieRule::Fractional => T::one() / from_usize::<T>(tied.len()),
                    TieRule::FirstSeen => {
                        let leader = *tied.iter().min_by_key(|&&j| first[j]).unwrap();
                        if leader == self.gold_index {
                            T::one()
                        } else {
                            T::zero()
                        }
                    }
                };
                total = total + prob * credit;
            }
            // odometer increment
            let mut i = 0;
            loop {
                if i == n {
                    return Ok(total);
                }
                seq[i] += 1;
                if seq[i] < m {
                    break;
                }
                seq[i] = 0;
                i += 1;
            }
        }
    }
}

impl CategoricalAnswerModel<f64> {
    /// `n` i.i.d. draws relabelled densely in order of first appearance.
    pub fn sample_trace(&self, question_id: &str, n_max: usize, seed: u64) -> Result<QuestionTrace> {
        if n_max == 0 {
            return Err(Error::out_of_range("n_max", 0, 1, usize::MAX));
        }
        let mut rng = rng::stream(seed, &[Key::Str(question_id), Key::Str("draws")]);
        let mut relabel = vec![u32::MAX; self.p.len()];
        let mut next = 0u32;
        let draws = (0..n_max)
            .map(|_| {
                let a = self.sample_index(&mut rng);
                if relabel[a] == u32::MAX {
                    relabel[a] = next;
                    next += 1;
                }
                AnswerId(relabel[a])
            })
            .collect();
        let gold = (relabel[self.gold_index] != u32::MAX).then(|| AnswerId(relabel[self.gold_index]));
        QuestionTrace::new(question_id, gold, draws)
    }

    fn sample_index(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, &pj) in self.p.iter().enumerate() {
            if pj > 0.0 {
                last_positive = j;
                acc += pj;
                if u < acc {
                    return j;
                }
            }
        }
        last_positive
    }

    /// Monte-Carlo vote accuracy with its standard error, for sizes
    /// beyond the DP bound.
    pub fn mc_mv_accuracy(&self, n: usize, trials: u64, seed: u64, tie: TieRule) -> Result<(f64, f64)> {
        if n == 0 || trials == 0 {
            return Err(Error::InvalidArgument("n and trials must be positive".into()));
        }
        let mut rng = rng::stream(seed, &[Key::Str("mc_mv"), Key::Int(n as u64)]);
        let m = self.p.len();
        let mut counts = vec![0u32; m];
        let mut first = vec![u32::MAX; m];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..trials {
            counts.iter_mut().for_each(|c| *c = 0);
            first.iter_mut().for_each(|f| *f = u32::MAX);
            for i in 0..n {
                let a = self.sample_index(&mut rng);
                counts[a] += 1;
                if first[a] == u32::MAX {
                    first[a] = i as u32;
                }
            }
            let top = *counts.iter().max().unwrap();
            let credit = if counts[self.gold_index] != top {
                0.0
            } else {
                match tie {
                    TieRule::Fractional => 1.0 / counts.iter().filter(|&&c| c == top).count() as f64,
                    TieRule::FirstSeen => {
                        let leader = (0..m).filter(|&j| counts[j] == top).min_by_key(|&j| first[j]).unwrap();
                        (leader == self.gold_index) as u8 as f64
                    }
                }
            };
            sum += credit;
            sum_sq += credit * credit;
        }
        let t = trials as f64;
        let mean = sum / t;
        let var = (sum_sq / t - mean * mean).max(0.0);
        Ok((mean, (var / t).sqrt()))
    }

    /// Union-bound floor `1 - (m - 1) exp(-n margin^2 / 2)`, clamped at 0.
    pub fn union_bound_lower(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::out_of_range("n", 0, 1, usize::MAX));
        }
        let margin = self.margin_stats().margin;
        if margin <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "union bound needs a positive margin (got {margin})"
            )));
        }
        let m = self.p.len() as f64;
        Ok((1.0 - (m - 1.0) * (-(n as f64) * margin * margin / 2.0).exp()).max(0.0))
    }
}

/// Range `[lo, hi]` used by the synthetic generator.
pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSpec {
    pub count: usize,
    /// Margin range for types 3 and 4, gap range for type 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<Range>,
}

/// Recipe for a synthetic dataset with planted type mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_max: usize,
    pub seed: u64,
    /// Inclusive range of the answer-vocabulary size `m`.
    #[serde(default = "default_answers")]
    pub answers: [usize; 2],
    /// Per-type recipe keyed `"1"`..`"5"`.
    pub types: BTreeMap<String, TypeSpec>,
}

fn default_answers() -> [usize; 2] {
    [2, 4]
}

pub const DEFAULT_T3_MARGIN: Range = [-0.3, -0.15];
pub const DEFAULT_T4_MARGIN: Range = [0.15, 0.3];
pub const DEFAULT_T5_GAP: Range = [0.0, 0.02];
/// Smallest gold probability given to type-3 models.
const MIN_T3_GOLD: f64 = 0.08;

impl SynthSpec {
    /// Recipe with the given per-type counts and default ranges.
    pub fn with_counts(n_max: usize, seed: u64, counts: [usize; 5]) -> Self {
        let types = SampleType::ALL
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c > 0)
            .map(|(t, c)| (t.number().to_string(), TypeSpec { count: c, margin: None }))
            .collect();
        SynthSpec {
            n_max,
            seed,
            answers: default_answers(),
            types,
        }
    }

    fn planted(&self) -> Result<Vec<(SampleType, TypeSpec)>> {
        let mut out = Vec::new();
        for (key, spec) in &self.types {
            let t = key
                .parse::<usize>()
                .ok()
                .and_then(SampleType::from_number)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown type key `{key}`")))?;
            out.push((t, spec.clone()));
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be positive".into()));
        }
        let [lo, hi] = self.answers;
        if lo < 2 || hi < lo || hi > DP_MAX_ANSWERS {
            return Err(Error::InvalidArgument(format!(
                "answers range must satisfy 2 <= lo <= hi <= {DP_MAX_ANSWERS}"
            )));
        }
        for (t, spec) in self.planted()? {
            let Some([a, b]) = spec.margin else { continue };
            let ok = a <= b
                && match t {
                    SampleType::T3ApproxDecreasing => b < 0.0 && a > -1.0,
                    SampleType::T4ApproxIncreasing => a > 0.0 && b < 1.0,
                    SampleType::T5Nonmonotonic => a >= 0.0 && b <= 0.05,
                    _ => false,
                };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "margin range [{a}, {b}] inconsistent with type {}",
                    t.number()
                )));
            }
        }
        Ok(())
    }
}

/// Draws a model whose gold answer leads (`signed_margin > 0`) or trails
/// the strongest competitor by `|signed_margin|`, with `m` answers.
pub fn model_with_margin(m: usize, signed_margin: f64, rng: &mut impl Rng) -> CategoricalAnswerModel {
    let d = signed_margin.abs();
    // competitor probability c: gold = c + margin, the rest share 1 - gold - c
    let (lo, hi) = if signed_margin >= 0.0 {
        ((1.0 - d) / m as f64, (1.0 - d) / 2.0)
    } else {
        (((1.0 + d) / m as f64).max(d + MIN_T3_GOLD), (1.0 + d) / 2.0)
    };
    let c = if hi > lo { rng.random_range(lo..=hi) } else { hi };
    let gold_p = c + signed_margin;
    let rest = (1.0 - gold_p - c).max(0.0);
    let mut p = vec![gold_p, c];
    p.extend(std::iter::repeat_n(rest / (m - 2).max(1) as f64, m - 2));
    if m == 2 {
        p[1] = 1.0 - gold_p;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut shuffled = vec![0.0; m];
    for (src, &dst) in order.iter().enumerate() {
        shuffled[dst] = p[src];
    }
    let sum: f64 = shuffled.iter().sum();
    shuffled.iter_mut().for_each(|x| *x /= sum);
    CategoricalAnswerModel {
        p: shuffled,
        gold_index: order[0],
    }
}

/// Model whose curve is intended to have the given type.
pub fn planted_model(t: SampleType, m: usize, range: Option<Range>, rng: &mut impl Rng) -> CategoricalAnswerModel {
    let pick = |r: Range, rng: &mut dyn rand::RngCore| if r[1] > r[0] { rng.random_range(r[0]..=r[1]) } else { r[0] };
    match t {
        SampleType::T1Const1 => CategoricalAnswerModel {
            p: vec![1.0],
            gold_index: 0,
        },
        SampleType::T2Const0 => {
            let mut p: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
            p[0] = 0.0;
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            CategoricalAnswerModel { p, gold_index: 0 }
        }
        SampleType::T3ApproxDecreasing => {
            let d = pick(range.unwrap_or(DEFAULT_T3_MARGIN), rng);
            model_with_margin(m, d, rng)
        }
        SampleType::T4ApproxIncreasing => {
            let d = pick(range.unwrap_or(DEFAULT_T4_MARGIN), rng);
            model_with_margin(m, d, rng)
        }
        SampleType::T5Nonmonotonic => {
            let g = pick(range.unwrap_or(DEFAULT_T5_GAP), rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            model_with_margin(m, sign * g, rng)
        }
    }
}

/// A synthetic dataset and the type planted in each question.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: TraceDataset,
    pub intended: Vec<SampleType>,
    pub models: Vec<CategoricalAnswerModel>,
}

impl SynthDataset {
    /// Sidecar `{"question_id": intended_type}`.
    pub fn sidecar_json(&self) -> String {
        let map: BTreeMap<&str, usize> = self
            .dataset
            .traces
            .iter()
            .zip(&self.intended)
            .map(|(t, ty)| (t.question_id.as_str(), ty.number()))
            .collect();
        serde_json::to_string(&map).expect("sidecar serializes")
    }
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut plan: Vec<(SampleType, Option<Range>)> = Vec::new();
    for (t, ts) in spec.planted()? {
        plan.extend(std::iter::repeat_n((t, ts.margin), ts.count));
    }
    let mut order_rng = rng::stream(spec.seed, &[Key::Str("question_order")]);
    plan.shuffle(&mut order_rng);
    let width = plan.len().max(1).to_string().len().max(4);
    let mut traces = Vec::with_capacity(plan.len());
    let mut intended = Vec::with_capacity(plan.len());
    let mut models = Vec::with_capacity(plan.len());
    for (i, (t, range)) in plan.into_iter().enumerate() {
        let qid = format!("q{i:0width$}");
        let mut rng = rng::stream(spec.seed, &[Key::Str(&qid), Key::Str("model")]);
        let m = rng.random_range(spec.answers[0]..=spec.answers[1]);
        let model = planted_model(t, m, range, &mut rng);
        traces.push(model.sample_trace(&qid, spec.n_max, spec.seed)?);
        intended.push(t);
        models.push(model);
    }
    let config = SamplingConfig {
        model_name: "categorical-sim".into(),
        seed: spec.seed as i64,
        ..SamplingConfig::default()
    };
    Ok(SynthDataset {
        dataset: TraceDataset::new(spec.n_max, config, traces)?,
        intended,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;
    use num_bigint::BigInt;

    fn model(p: &[f64], g: usize) -> CategoricalAnswerModel {
        CategoricalAnswerModel::new(p.to_vec(), g).unwrap()
    }

    #[test]
    fn margins() {
        let s = model(&[0.6, 0.4], 0).margin_stats();
        assert!((s.margin - 0.2).abs() < 1e-15 && (s.gap - 0.2).abs() < 1e-15);
        let s = model(&[0.4, 0.6], 0).margin_stats();
        assert!((s.margin + 0.2).abs() < 1e-15 && (s.gap - 0.2).abs() < 1e-15);
        let s = model(&[0.5, 0.5], 0).margin_stats();
        assert_eq!((s.margin, s.gap), (0.0, 0.0));
        let s = model(&[1.0], 0).margin_stats();
        assert_eq!((s.margin, s.gap), (1.0, 1.0));
    }

    #[test]
    fn rejects_invalid_vectors() {
        assert!(CategoricalAnswerModel::new(vec![0.5, 0.6], 0).is_err());
        assert!(CategoricalAnswerModel::new(vec![1.2, -0.2], 0).is_err());
        assert!(CategoricalAnswerModel::new(vec![1.0], 1).is_err());
        assert!(CategoricalAnswerModel::<f64>::new(vec![], 0).is_err());
    }

    #[test]
    fn exact_accuracy_examples() {
        let m = model(&[0.6, 0.4], 0);
        let v = m.exact_mv_accuracy(3, TieRule::Fractional).unwrap();
        assert!((v - 0.648).abs() < 1e-12);
        assert_eq!(model(&[1.0, 0.0], 0).exact_mv_accuracy(7, TieRule::Fractional).unwrap(), 1.0);
        let v = model(&[0.5, 0.5], 0).exact_mv_accuracy(2, TieRule::Fractional).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(model(&[0.5, 0.5], 0).exact_mv_accuracy(65, TieRule::Fractional).is_err());
    }

    #[test]
    fn exact_rational_matches_brute_force() {
        let r = |a: i64, b: i64| Exact::new(BigInt::from(a), BigInt::from(b));
        let m = CategoricalAnswerModel::new(vec![r(1, 2), r(1, 3), r(1, 6)], 1).unwrap();
        for n in 1..=7 {
            let dp = m.exact_mv_accuracy(n, TieRule::Fractional).unwrap();
            assert_eq!(dp, m.exact_mv_accuracy_brute_force(n, TieRule::Fractional).unwrap());
            assert_eq!(dp, m.exact_mv_accuracy_brute_force(n, TieRule::FirstSeen).unwrap());
        }
    }

    #[test]
    fn union_bound_formula() {
        let m = model(&[0.6, 0.4], 0);
        let b = m.union_bound_lower(50).unwrap();
        assert!((b - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!(m.union_bound_lower(0).is_err());
        assert!(model(&[0.4, 0.6], 0).union_bound_lower(5).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_dense() {
        let m = model(&[0.0, 0.7, 0.3], 0);
        let a = m.sample_trace("q", 50, 9).unwrap();
        assert_eq!(a, m.sample_trace("q", 50, 9).unwrap());
        assert_eq!(a.gold, None);
        let point = model(&[1.0, 0.0], 0);
        let t = point.sample_trace("q", 20, 1).unwrap();
        assert!(t.draws.iter().all(|&d| Some(d) == t.gold));
    }

    #[test]
    fn planted_margins_match_request() {
        let mut rng = rng::stream(3, &[]);
        for m in 2..=6 {
            for &d in &[0.15, 0.3, -0.15, -0.3, 0.01] {
                let model = model_with_margin(m, d, &mut rng);
                let s = model.margin_stats();
                assert!((s.margin - d).abs() < 1e-9, "m={m} d={d} got {}", s.margin);
                assert!(model.p[model.gold_index] > 0.0);
            }
        }
    }

    #[test]
    fn synth_spec_validation() {
        let mut spec = SynthSpec::with_counts(16, 1, [1, 0, 0, 2, 0]);
        assert!(synth_dataset(&spec).is_ok());
        spec.types.get_mut("4").unwrap().margin = Some([-0.2, -0.1]);
        assert!(synth_dataset(&spec).is_err());
        spec.types.insert("7".into(), TypeSpec { count: 1, margin: None });
        assert!(synth_dataset(&spec).is_err());
    }

    #[test]
    fn all_type1_spec_is_all_gold() {
        let ds = synth_dataset(&SynthSpec::with_counts(12, 5, [6, 0, 0, 0, 0])).unwrap();
        for t in &ds.dataset.traces {
            assert!(t.draws.iter().all(|&d| Some(d) == t.gold));
        }
        assert!(ds.sidecar_json().contains("\"q0000\":1"));
    }
}
