//! Approximate monotonicity and the five-way partition of curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::vote::BudgetAccuracyCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SampleType {
    /// `A(N) == 1` everywhere.
    T1Const1,
    /// `A(N) == 0` everywhere.
    T2Const0,
    T3ApproxDecreasing,
    T4ApproxIncreasing,
    T5Nonmonotonic,
}

impl SampleType {
    pub const ALL: [SampleType; 5] = [
        SampleType::T1Const1,
        SampleType::T2Const0,
        SampleType::T3ApproxDecreasing,
        SampleType::T4ApproxIncreasing,
        SampleType::T5Nonmonotonic,
    ];

    /// 1-based type number.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    /// 0-based position in [`SampleType::ALL`].
    pub fn index(self) -> usize {
        match self {
            SampleType::T1Const1 => 0,
            SampleType::T2Const0 => 1,
            SampleType::T3ApproxDecreasing => 2,
            SampleType::T4ApproxIncreasing => 3,
            SampleType::T5Nonmonotonic => 4,
        }
    }

    pub fn from_number(n: usize) -> Option<Self> {
        (1..=5).contains(&n).then(|| SampleType::ALL[n - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    fn sign<T: Real>(self) -> T {
        match self {
            Direction::Increasing => T::one(),
            Direction::Decreasing => -T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityParams {
    pub step: usize,
    pub threshold: f64,
    pub const_tol: f64,
}

impl MonotonicityParams {
    /// Step `floor(sqrt(n_max))`, threshold 0.8, constant tolerance 1e-9.
    pub fn for_n_max(n_max: usize) -> Self {
        MonotonicityParams {
            step: (n_max as f64).sqrt().floor() as usize,
            threshold: 0.80,
            const_tol: 1e-9,
        }
    }
}

/// Fraction of step-`s` differences that agree with `direction`
/// (zero differences count for both directions) compared against the
/// threshold.
pub fn approx_monotone<T: Real>(
    curve: &BudgetAccuracyCurve<T>,
    direction: Direction,
    params: &MonotonicityParams,
) -> Result<bool> {
    let n_max = curve.values.len();
    let s = params.step;
    if s == 0 || s >= n_max {
        return Err(Error::InvalidArgument(format!(
            "monotonicity step {s} must lie in [1, {n_max})"
        )));
    }
    let sign = direction.sign::<T>();
    let windows = n_max - s;
    let agreeing = (0..windows)
        .filter(|&i| sign * (curve.values[i + s] - curve.values[i]) >= T::zero())
        .count();
    Ok(agreeing as f64 / windows as f64 >= params.threshold)
}

/// Type of one curve. Constant curves are checked first; curves that pass
/// the monotonicity test in both directions are resolved by the sign of
/// `A(N_max) - A(1)`.
pub fn classify<T: Real>(curve: &BudgetAccuracyCurve<T>, params: &MonotonicityParams) -> Result<SampleType> {
    let tol: T = real(params.const_tol);
    if curve.values.iter().all(|&v| v >= T::one() - tol) {
        return Ok(SampleType::T1Const1);
    }
    if curve.values.iter().all(|&v| v <= tol) {
        return Ok(SampleType::T2Const0);
    }
    let up = approx_monotone(curve, Direction::Increasing, params)?;
    let down = approx_monotone(curve, Direction::Decreasing, params)?;
    Ok(match (up, down) {
        (true, false) => SampleType::T4ApproxIncreasing,
        (false, true) => SampleType::T3ApproxDecreasing,
        (false, false) => SampleType::T5Nonmonotonic,
        (true, true) => {
            let net = *curve.values.last().unwrap() - curve.values[0];
            if net > T::zero() {
                SampleType::T4ApproxIncreasing
            } else if net < T::zero() {
                SampleType::T3ApproxDecreasing
            } else {
                SampleType::T5Nonmonotonic
            }
        }
    })
}

/// Type proportions and the member indices of every class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub p: [f64; 5],
    pub members: [Vec<usize>; 5],
    pub types: Vec<SampleType>,
}

impl Partition {
    pub fn count(&self, t: SampleType) -> usize {
        self.members[t.index()].len()
    }

    /// Report layout `{"p": [..], "members": {"1": [ids], ...}}`.
    pub fn to_json(&self, ids: &[&str]) -> serde_json::Value {
        let members: BTreeMap<String, Vec<&str>> = SampleType::ALL
            .iter()
            .map(|t| {
                (
                    t.number().to_string(),
                    self.members[t.index()].iter().map(|&i| ids[i]).collect(),
                )
            })
            .collect();
        serde_json::json!({ "p": self.p, "members": members })
    }

    /// CSV `question_id,type`.
    pub fn to_csv(&self, ids: &[&str]) -> String {
        let mut out = String::from("question_id,type\n");
        for (id, t) in ids.iter().zip(&self.types) {
            out.push_str(&format!("{},{}\n", crate::vote::csv_field(id), t.number()));
        }
        out
    }
}

pub fn partition<T: Real>(curves: &[BudgetAccuracyCurve<T>], params: &MonotonicityParams) -> Result<Partition> {
    if curves.is_empty() {
        return Err(Error::Empty("partition needs at least one curve"));
    }
    let types = curves
        .iter()
        .map(|c| classify(c, params))
        .collect::<Result<Vec<_>>>()?;
    let mut members: [Vec<usize>; 5] = Default::default();
    for (i, t) in types.iter().enumerate() {
        members[t.index()].push(i);
    }
    let total = curves.len() as f64;
    let p = std::array::from_fn(|k| members[k].len() as f64 / total);
    Ok(Partition { p, members, types })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(v: &[f64]) -> BudgetAccuracyCurve {
        BudgetAccuracyCurve::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn constant_curve_is_monotone_both_ways() {
        let c = curve(&[0.4; 9]);
        let p = MonotonicityParams::for_n_max(9);
        assert!(approx_monotone(&c, Direction::Increasing, &p).unwrap());
        assert!(approx_monotone(&c, Direction::Decreasing, &p).unwrap());
        assert_eq!(classify(&c, &p).unwrap(), SampleType::T5Nonmonotonic);
    }

    #[test]
    fn strictly_increasing() {
        let c = curve(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        let p = MonotonicityParams::for_n_max(9);
        assert!(approx_monotone(&c, Direction::Increasing, &p).unwrap());
        assert!(!approx_monotone(&c, Direction::Decreasing, &p).unwrap());
        assert_eq!(classify(&c, &p).unwrap(), SampleType::T4ApproxIncreasing);
    }

    #[test]
    fn rise_then_fall_fails_threshold() {
        // diffs at step 3: .3 .3 .3 .1 -.1 -.2 -> 4/6 < 0.8
        let c = curve(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.4, 0.3, 0.2]);
        let p = MonotonicityParams::for_n_max(9);
        assert_eq!(p.step, 3);
        assert!(!approx_monotone(&c, Direction::Increasing, &p).unwrap());
    }

    #[test]
    fn step_must_be_below_n_max() {
        let c = curve(&[0.2, 0.3]);
        let p = MonotonicityParams {
            step: 2,
            ..MonotonicityParams::for_n_max(4)
        };
        assert!(approx_monotone(&c, Direction::Increasing, &p).is_err());
    }

    #[test]
    fn constants_and_late_rise() {
        let p = MonotonicityParams::for_n_max(16);
        assert_eq!(classify(&curve(&[1.0; 16]), &p).unwrap(), SampleType::T1Const1);
        assert_eq!(classify(&curve(&[0.0; 16]), &p).unwrap(), SampleType::T2Const0);
        let mut v = vec![0.4; 16];
        v[15] = 0.5;
        assert_eq!(classify(&curve(&v), &p).unwrap(), SampleType::T4ApproxIncreasing);
        let mut v = vec![0.4; 16];
        v[15] = 0.3;
        assert_eq!(classify(&curve(&v), &p).unwrap(), SampleType::T3ApproxDecreasing);
    }

    #[test]
    fn partition_proportions() {
        let p = MonotonicityParams::for_n_max(4);
        let cs = vec![curve(&[1.0; 4]), curve(&[0.0; 4]), curve(&[1.0; 4]), curve(&[0.0; 4])];
        let part = partition(&cs, &p).unwrap();
        assert_eq!(part.p, [0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(part.members[0], vec![0, 2]);
        assert!(partition::<f64>(&[], &p).is_err());
        let json = part.to_json(&["a", "b", "c", "d"]);
        assert_eq!(json["members"]["2"], serde_json::json!(["b", "d"]));
    }

    #[test]
    fn works_in_single_precision() {
        let c = BudgetAccuracyCurve::<f32>::from_values(vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let p = MonotonicityParams::for_n_max(5);
        assert_eq!(classify(&c, &p).unwrap(), SampleType::T4ApproxIncreasing);
    }
}
