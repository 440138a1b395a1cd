//! Sample- and system-optimal budgets, the overscaling index, type-level
//! gains, and a numerical check of the overscaling upper bound
//! `M_D <= phi(p4)`.

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::taxonomy::{Partition, SampleType};
use crate::vote::BudgetAccuracyCurve;

pub const DEFAULT_EPS_ACC: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalN {
    pub n_star: usize,
    pub max_acc: f64,
}

/// Smallest budget whose value is within `eps_acc` of the curve maximum.
fn tolerant_argmax<T: Real>(values: &[T], eps_acc: f64) -> OptimalN {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    let floor = max - real::<T>(eps_acc);
    let n_star = values.iter().position(|&v| v >= floor).expect("non-empty curve") + 1;
    OptimalN {
        n_star,
        max_acc: max.to_f64().unwrap_or(f64::NAN),
    }
}

pub fn sample_optimal_n<T: Real>(curve: &BudgetAccuracyCurve<T>, eps_acc: f64) -> OptimalN {
    tolerant_argmax(&curve.values, eps_acc)
}

/// Pointwise mean of equal-length curves.
pub fn mean_curve<T: Real>(curves: &[BudgetAccuracyCurve<T>]) -> Result<Vec<T>> {
    mean_of(curves.iter())
}

fn mean_of<'a, T: Real>(mut curves: impl Iterator<Item = &'a BudgetAccuracyCurve<T>>) -> Result<Vec<T>> {
    let first = curves.next().ok_or(Error::Empty("no curves"))?;
    let mut sum = first.values.clone();
    let mut count = 1usize;
    for c in curves {
        if c.values.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                got: c.values.len(),
            });
        }
        for (s, &v) in sum.iter_mut().zip(&c.values) {
            *s = *s + v;
        }
        count += 1;
    }
    let k = T::from_usize(count).unwrap();
    Ok(sum.into_iter().map(|s| s / k).collect())
}

/// Smallest budget maximizing dataset-mean accuracy (within `eps_acc`).
pub fn system_optimal_n<T: Real>(curves: &[BudgetAccuracyCurve<T>], eps_acc: f64) -> Result<usize> {
    Ok(tolerant_argmax(&mean_curve(curves)?, eps_acc).n_star)
}

/// `A(n2) - A(n1)`.
pub fn gain<T: Real>(curve: &BudgetAccuracyCurve<T>, n1: usize, n2: usize) -> Result<T> {
    let n_max = curve.values.len();
    for n in [n1, n2] {
        if n == 0 || n > n_max {
            return Err(Error::out_of_range("budget", n, 1, n_max));
        }
    }
    Ok(curve.at(n2) - curve.at(n1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverscalingReport {
    /// Mean of per-question optima.
    pub n_star_dataset: f64,
    pub n_system: usize,
    /// `n_star_dataset / n_system`.
    pub index: f64,
    /// Mean optimum inside each type class; `None` for empty classes.
    pub per_type_n_star: [Option<f64>; 5],
    pub proportions: [f64; 5],
    pub n_max: usize,
}

/// Per-question optima in curve order.
pub fn per_question_optima<T: Real>(curves: &[BudgetAccuracyCurve<T>], eps_acc: f64) -> Vec<OptimalN> {
    curves.iter().map(|c| sample_optimal_n(c, eps_acc)).collect()
}

pub fn overscaling_index<T: Real>(
    curves: &[BudgetAccuracyCurve<T>],
    partition: &Partition,
    eps_acc: f64,
) -> Result<OverscalingReport> {
    if curves.is_empty() {
        return Err(Error::Empty("overscaling index needs at least one curve"));
    }
    if partition.types.len() != curves.len() {
        return Err(Error::DimensionMismatch {
            expected: curves.len(),
            got: partition.types.len(),
        });
    }
    let optima = per_question_optima(curves, eps_acc);
    let n_star_dataset = optima.iter().map(|o| o.n_star as f64).sum::<f64>() / curves.len() as f64;
    let n_system = system_optimal_n(curves, eps_acc)?;
    let per_type_n_star = std::array::from_fn(|k| {
        let m = &partition.members[k];
        (!m.is_empty()).then(|| m.iter().map(|&i| optima[i].n_star as f64).sum::<f64>() / m.len() as f64)
    });
    Ok(OverscalingReport {
        n_star_dataset,
        n_system,
        index: n_star_dataset / n_system as f64,
        per_type_n_star,
        proportions: partition.p,
        n_max: curves[0].values.len(),
    })
}

/// Quantities entering the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Inputs {
    /// `N*_{D3} + N*_{D5} - 1`.
    pub kappa: f64,
    /// Infimum gain ratio; `f64::INFINITY` when no finite ratio exists.
    pub delta: f64,
    pub p4: f64,
    pub n_star_d4: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub inputs: Theorem1Inputs,
    pub phi: f64,
    pub m_d: f64,
    pub holds: bool,
    pub assumptions_met: bool,
    /// `p4 * delta > 1 - p4`.
    pub indicator: bool,
    /// Integer budget at which class gains are evaluated (`ceil(N*_{D4})`).
    pub n4_eval: usize,
    pub n_system: usize,
    /// Type numbers whose class is empty (filled by convention).
    pub empty_classes: Vec<usize>,
    /// Which assumption failed first, if any.
    pub violated_assumption: Option<String>,
}

impl Theorem1Report {
    pub fn to_json(&self) -> serde_json::Value {
        let delta = if self.inputs.delta.is_finite() {
            json!(self.inputs.delta)
        } else {
            json!(null)
        };
        json!({
            "inputs": {
                "kappa": self.inputs.kappa,
                "delta": delta,
                "delta_infinite": !self.inputs.delta.is_finite(),
                "p4": self.inputs.p4,
                "n_star_d4": self.inputs.n_star_d4,
            },
            "phi": self.phi,
            "m_d": self.m_d,
            "holds": self.holds,
            "assumptions_met": self.assumptions_met,
            "indicator": self.indicator,
            "n4_eval": self.n4_eval,
            "n_system": self.n_system,
            "empty_classes": self.empty_classes,
            "violated_assumption": self.violated_assumption,
        })
    }
}

/// Class-mean curves (`None` for empty classes).
pub fn class_mean_curves<T: Real>(curves: &[BudgetAccuracyCurve<T>], partition: &Partition) -> [Option<Vec<f64>>; 5] {
    std::array::from_fn(|k| {
        let members = &partition.members[k];
        if members.is_empty() {
            return None;
        }
        let mean = mean_of(members.iter().map(|&i| &curves[i])).expect("non-empty class");
        Some(mean.into_iter().map(|v| v.to_f64().unwrap()).collect())
    })
}

/// `phi(p4) = (kappa + p4 (N4 - kappa)) / (1 + (N4 - 1) 1{p4 delta > 1 - p4})`.
pub fn phi(inputs: &Theorem1Inputs) -> (f64, bool) {
    let Theorem1Inputs {
        kappa,
        delta,
        p4,
        n_star_d4,
    } = *inputs;
    // 0 * inf is taken as 0: with no type-4 mass the indicator cannot fire
    let lhs = if p4 == 0.0 { 0.0 } else { p4 * delta };
    let indicator = lhs > 1.0 - p4;
    let denom = 1.0 + if indicator { n_star_d4 - 1.0 } else { 0.0 };
    ((kappa + p4 * (n_star_d4 - kappa)) / denom, indicator)
}

/// Evaluates the bound on a classified dataset.
///
/// Class gains use the class-mean curves at the integer budget
/// `ceil(N*_{D4})`. Empty classes contribute `N* = 1` and zero gain. The
/// ratio at `N = ceil(N*_{D4})` is 0/0 and is skipped; a zero type-3 loss
/// makes that ratio infinite.
pub fn theorem1_check<T: Real>(
    curves: &[BudgetAccuracyCurve<T>],
    partition: &Partition,
    eps_acc: f64,
) -> Result<Theorem1Report> {
    let report = overscaling_index(curves, partition, eps_acc)?;
    let means = class_mean_curves(curves, partition);
    let n_star = |t: SampleType| report.per_type_n_star[t.index()].unwrap_or(1.0);
    let n4 = n_star(SampleType::T4ApproxIncreasing);
    let kappa = n_star(SampleType::T3ApproxDecreasing) + n_star(SampleType::T5Nonmonotonic) - 1.0;
    let n_max = report.n_max;
    let n4_eval = (n4 - 1e-9).ceil().clamp(1.0, n_max as f64) as usize;
    let class_gain = |t: SampleType, a: usize, b: usize| -> f64 {
        means[t.index()].as_ref().map_or(0.0, |c| c[b - 1] - c[a - 1])
    };

    let mut delta = f64::INFINITY;
    if means[SampleType::T3ApproxDecreasing.index()].is_some() {
        for n in 1..n4_eval {
            let up = class_gain(SampleType::T4ApproxIncreasing, n, n4_eval);
            let loss = -class_gain(SampleType::T3ApproxDecreasing, n, n4_eval);
            if loss > 0.0 {
                delta = delta.min(up / loss);
            }
        }
    }

    let mut violated = None;
    for n in 1..=n4_eval {
        for t in [SampleType::T1Const1, SampleType::T2Const0, SampleType::T5Nonmonotonic] {
            if violated.is_none() && class_gain(t, n, n4_eval).abs() > eps_acc {
                violated = Some(format!("type-{} gain nonzero on [{n}, {n4_eval}]", t.number()));
            }
        }
        if violated.is_none() && class_gain(SampleType::T3ApproxDecreasing, n, n4_eval) > eps_acc {
            violated = Some(format!("type-3 gain positive on [{n}, {n4_eval}]"));
        }
        if violated.is_none()
            && n < n4_eval
            && means[SampleType::T4ApproxIncreasing.index()].is_some()
            && class_gain(SampleType::T4ApproxIncreasing, n, n4_eval) <= eps_acc
        {
            violated = Some(format!("type-4 gain not positive on [{n}, {n4_eval}]"));
        }
    }

    let inputs = Theorem1Inputs {
        kappa,
        delta,
        p4: report.proportions[SampleType::T4ApproxIncreasing.index()],
        n_star_d4: n4,
    };
    let (phi, indicator) = phi(&inputs);
    Ok(Theorem1Report {
        inputs,
        phi,
        m_d: report.index,
        holds: report.index <= phi + eps_acc,
        assumptions_met: violated.is_none(),
        indicator,
        n4_eval,
        n_system: report.n_system,
        empty_classes: (1..=5).filter(|&k| partition.members[k - 1].is_empty()).collect(),
        violated_assumption: violated,
    })
}

/// Per-type gain table: per type `N*_{D_i}`, `Delta_{D_i}(1, N*_{D4})` and
/// `Delta_{D_i}(N*_{D4}, N_max)`. Empty classes leave blank cells.
pub fn type_gain_table<T: Real>(
    curves: &[BudgetAccuracyCurve<T>],
    partition: &Partition,
    report: &OverscalingReport,
) -> String {
    let means = class_mean_curves(curves, partition);
    let n4 = report.per_type_n_star[SampleType::T4ApproxIncreasing.index()].unwrap_or(1.0);
    let n4_eval = (n4 - 1e-9).ceil().clamp(1.0, report.n_max as f64) as usize;
    let mut out = String::from("type,proportion,n_star,gain_1_to_n4,gain_n4_to_nmax\n");
    for t in SampleType::ALL {
        let k = t.index();
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let g1 = means[k].as_ref().map(|c| c[n4_eval - 1] - c[0]);
        let g2 = means[k].as_ref().map(|c| c[report.n_max - 1] - c[n4_eval - 1]);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.number(),
            report.proportions[k],
            cell(report.per_type_n_star[k]),
            cell(g1),
            cell(g2)
        ));
    }
    out
}
