//! Combining layer-wise estimates: inverse-variance and GLS weights,
//! Monte-Carlo verification of GLS optimality, and diagnostics of the
//! diagonal covariance surrogate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Key};

/// Floor applied to validation variances before inversion.
pub const EPS_VAR: f64 = 1e-12;
/// Largest condition number accepted by [`gls_weights`].
pub const MAX_CONDITION: f64 = 1e12;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeightVector {
    pub weights: Vec<f64>,
    pub sigma_hat_sq: Vec<f64>,
}

/// `w_l ∝ 1 / max(sigma_l^2, EPS_VAR)`.
pub fn inverse_variance_weights(sigma_hat_sq: &[f64]) -> Result<LayerWeightVector> {
    if sigma_hat_sq.is_empty() {
        return Err(Error::Empty("layer variances"));
    }
    if sigma_hat_sq.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(Error::InvalidArgument("variances must be finite and non-negative".into()));
    }
    let inv: Vec<f64> = sigma_hat_sq.iter().map(|s| 1.0 / s.max(EPS_VAR)).collect();
    let total: f64 = inv.iter().sum();
    Ok(LayerWeightVector {
        weights: inv.iter().map(|v| v / total).collect(),
        sigma_hat_sq: sigma_hat_sq.to_vec(),
    })
}

/// Symmetric error covariance `Sigma = D + R` of the layer estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovariance {
    sigma: DMatrix<f64>,
}

impl ErrorCovariance {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() == 0 || !sigma.is_square() {
            return Err(Error::InvalidArgument("covariance must be a non-empty square matrix".into()));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidArgument(format!("covariance asymmetric by {asym:e}")));
        }
        Ok(ErrorCovariance { sigma })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("covariance rows must form a square matrix".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    /// Sample covariance of residual rows (one row per question, one
    /// column per layer), normalized by the row count.
    pub fn empirical(residuals: &[Vec<f64>]) -> Result<Self> {
        let n = residuals.len();
        if n == 0 {
            return Err(Error::Empty("residuals"));
        }
        let l = residuals[0].len();
        let mean: Vec<f64> = (0..l).map(|j| residuals.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let sigma = DMatrix::from_fn(l, l, |i, j| {
            residuals.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n as f64
        });
        Self::new(sigma)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn d_part(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.sigma.diagonal())
    }

    pub fn r_part(&self) -> DMatrix<f64> {
        &self.sigma - self.d_part()
    }

    /// `w^T Sigma w`.
    pub fn quad_form(&self, w: &[f64]) -> Result<f64> {
        quad(&self.sigma, w)
    }
}

fn quad(m: &DMatrix<f64>, w: &[f64]) -> Result<f64> {
    if w.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: w.len(),
        });
    }
    let w = DVector::from_column_slice(w);
    Ok(w.dot(&(m * &w)))
}

/// Ratio of extreme eigenvalues; errors when `Sigma` is not positive definite.
pub fn condition_number(cov: &ErrorCovariance) -> Result<f64> {
    let eig = cov.sigma.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min.is_nan() || min <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(max / min)
}

/// `w* = Sigma^{-1} 1 / (1^T Sigma^{-1} 1)`. Entries may be negative.
pub fn gls_weights(cov: &ErrorCovariance) -> Result<LayerWeightVector> {
    let cond = condition_number(cov)?;
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let chol = cov.sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let x = chol.solve(&DVector::from_element(cov.dim(), 1.0));
    let total = x.sum();
    Ok(LayerWeightVector {
        weights: x.iter().map(|v| v / total).collect(),
        sigma_hat_sq: cov.sigma.diagonal().iter().copied().collect(),
    })
}

/// `round(n_max * sum_l w_l est_l)` clamped to `[1, n_max]`.
pub fn aggregate_estimate(per_layer: &[f64], weights: &LayerWeightVector, n_max: usize) -> Result<usize> {
    if per_layer.len() != weights.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.weights.len(),
            got: per_layer.len(),
        });
    }
    if n_max == 0 {
        return Err(Error::out_of_range("n_max", 0, 1, usize::MAX));
    }
    let combined: f64 = per_layer.iter().zip(&weights.weights).map(|(e, w)| e * w).sum();
    let budget = (n_max as f64 * combined).round();
    Ok(if budget.is_nan() { 1 } else { budget.clamp(1.0, n_max as f64) as usize })
}

/// Empirical MSE of one weight vector and the standard error of its
/// difference from the GLS MSE (paired over the same draws).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateMse {
    pub weights: Vec<f64>,
    pub mse: f64,
    pub diff_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub gls_weights: Vec<f64>,
    pub analytic_mse: f64,
    pub empirical_mse: f64,
    pub stderr: f64,
    pub single_layer: Vec<CandidateMse>,
    pub random_feasible: Vec<CandidateMse>,
    pub matches_analytic: bool,
    pub beats_single_layers: bool,
    pub beats_random: bool,
    pub passed: bool,
}

pub const MIN_THEOREM2_TRIALS: u64 = 10_000;
const RANDOM_CANDIDATES: usize = 50;
const TOLERANCE_SE: f64 = 4.0;

/// Monte-Carlo check that GLS weights minimize the aggregated MSE under
/// zero-mean Gaussian errors with covariance `Sigma`.
///
/// Candidates are every single layer plus 50 random feasible vectors, half
/// on the simplex and half affine (entries of either sign, summing to 1).
pub fn theorem2_mc_check(cov: &ErrorCovariance, trials: u64, seed: u64) -> Result<Theorem2Report> {
    if trials < MIN_THEOREM2_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_THEOREM2_TRIALS} trials, got {trials}"
        )));
    }
    let l = cov.dim();
    let gls = gls_weights(cov)?;
    let chol = cov.sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let lower = chol.l();

    let mut rng = rng::stream(seed, &[Key::Str("theorem2")]);
    let mut candidates: Vec<Vec<f64>> = (0..l)
        .map(|i| (0..l).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    for k in 0..RANDOM_CANDIDATES {
        let w: Vec<f64> = if k % 2 == 0 {
            let e: Vec<f64> = (0..l).map(|_| Exp1.sample(&mut rng)).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        } else {
            let v: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut rng)).collect();
            let shift = (1.0 - v.iter().sum::<f64>()) / l as f64;
            v.iter().map(|x| x + shift).collect()
        };
        candidates.push(w);
    }

    // running sums of the GLS loss and of each candidate's paired difference
    let (mut s_a, mut ss_a) = (0.0, 0.0);
    let mut s_d = vec![0.0; candidates.len()];
    let mut ss_d = vec![0.0; candidates.len()];
    let mut s_c = vec![0.0; candidates.len()];
    let mut z = DVector::zeros(l);
    for _ in 0..trials {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let e = &lower * &z;
        let la = sq(dot(&gls.weights, e.as_slice()));
        s_a += la;
        ss_a += la * la;
        for (c, w) in candidates.iter().enumerate() {
            let lc = sq(dot(w, e.as_slice()));
            let d = lc - la;
            s_c[c] += lc;
            s_d[c] += d;
            ss_d[c] += d * d;
        }
    }
    let t = trials as f64;
    let stderr_of = |s: f64, ss: f64| ((ss / t - sq(s / t)).max(0.0) / t).sqrt();
    let empirical_mse = s_a / t;
    let stderr = stderr_of(s_a, ss_a);
    let analytic_mse = cov.quad_form(&gls.weights)?;

    let mut results: Vec<CandidateMse> = candidates
        .into_iter()
        .enumerate()
        .map(|(c, weights)| CandidateMse {
            weights,
            mse: s_c[c] / t,
            diff_stderr: stderr_of(s_d[c], ss_d[c]),
        })
        .collect();
    let random_feasible = results.split_off(l);
    let single_layer = results;

    let dominated = |c: &CandidateMse| empirical_mse <= c.mse + TOLERANCE_SE * c.diff_stderr;
    let best_single = single_layer
        .iter()
        .min_by(|a, b| a.mse.total_cmp(&b.mse))
        .expect("at least one layer");
    let matches_analytic = (empirical_mse - analytic_mse).abs() <= TOLERANCE_SE * stderr;
    let beats_single_layers = dominated(best_single);
    let beats_random = random_feasible.iter().all(dominated);
    Ok(Theorem2Report {
        gls_weights: gls.weights,
        analytic_mse,
        empirical_mse,
        stderr,
        matches_analytic,
        beats_single_layers,
        beats_random,
        passed: matches_analytic && beats_single_layers && beats_random,
        single_layer,
        random_feasible,
    })
}

fn sq(x: f64) -> f64 {
    x * x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurrogateDiagnostics {
    /// Largest absolute off-diagonal row sum of `Sigma`.
    pub r_inf: f64,
    /// `||R||_F / ||Sigma||_F`.
    pub off_energy: f64,
    /// `|w^T R w| / (w^T D w)`.
    pub mse_dev: f64,
    pub w_r_w: f64,
    pub w_d_w: f64,
    pub w_sigma_w: f64,
    pub bounds_hold: bool,
}

/// How far the diagonal surrogate `D` can misstate the aggregated MSE.
pub fn diag_surrogate_diagnostics(cov: &ErrorCovariance, weights: &[f64]) -> Result<SurrogateDiagnostics> {
    let r = cov.r_part();
    let d = cov.d_part();
    let r_inf = r.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let w_r_w = quad(&r, weights)?;
    let w_d_w = quad(&d, weights)?;
    let w_sigma_w = cov.quad_form(weights)?;
    let sigma_norm = cov.sigma.norm();
    let slack = 1e-12 * (1.0 + r_inf);
    Ok(SurrogateDiagnostics {
        r_inf,
        off_energy: if sigma_norm > 0.0 { r.norm() / sigma_norm } else { 0.0 },
        mse_dev: if w_d_w > 0.0 { w_r_w.abs() / w_d_w } else { 0.0 },
        w_r_w,
        w_d_w,
        w_sigma_w,
        bounds_hold: w_r_w.abs() <= r_inf + slack
            && w_sigma_w >= w_d_w - r_inf - slack
            && w_sigma_w <= w_d_w + r_inf + slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn inverse_variance_examples() {
        assert!(close(&inverse_variance_weights(&[2.0; 4]).unwrap().weights, &[0.25; 4], 1e-15));
        assert!(close(&inverse_variance_weights(&[1.0, 4.0]).unwrap().weights, &[0.8, 0.2], 1e-15));
        let w = inverse_variance_weights(&[0.0, 0.5, 0.3]).unwrap().weights;
        assert!(w[0] > 1.0 - 1e-10);
        assert!(inverse_variance_weights(&[]).is_err());
        assert!(inverse_variance_weights(&[-1.0]).is_err());
    }

    #[test]
    fn gls_examples() {
        let id = ErrorCovariance::diagonal(&[1.0; 3]).unwrap();
        assert!(close(&gls_weights(&id).unwrap().weights, &[1.0 / 3.0; 3], 1e-15));
        let c = ErrorCovariance::diagonal(&[1.0, 4.0]).unwrap();
        let w = gls_weights(&c).unwrap().weights;
        assert!(close(&w, &[0.8, 0.2], 1e-14));
        assert!((c.quad_form(&w).unwrap() - 0.8).abs() < 1e-14);
        let c = ErrorCovariance::from_rows(&[vec![1.0, 0.9], vec![0.9, 1.0]]).unwrap();
        let w = gls_weights(&c).unwrap().weights;
        assert!(close(&w, &[0.5, 0.5], 1e-14));
        assert!((c.quad_form(&w).unwrap() - 0.95).abs() < 1e-14);
    }

    #[test]
    fn gls_rejects_bad_matrices() {
        let singular = ErrorCovariance::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(gls_weights(&singular).is_err());
        let ill = ErrorCovariance::diagonal(&[1.0, 1e-13]).unwrap();
        assert!(matches!(gls_weights(&ill), Err(Error::IllConditioned(_))));
        assert!(ErrorCovariance::from_rows(&[vec![1.0, 0.2], vec![0.1, 1.0]]).is_err());
    }

    #[test]
    fn aggregation_rounding_and_clamp() {
        let uniform = inverse_variance_weights(&[1.0, 1.0]).unwrap();
        assert_eq!(aggregate_estimate(&[0.1, 0.3], &uniform, 128).unwrap(), 26);
        assert_eq!(aggregate_estimate(&[1.0 / 128.0; 2], &uniform, 128).unwrap(), 1);
        let neg = LayerWeightVector {
            weights: vec![2.0, -1.0],
            sigma_hat_sq: vec![1.0, 1.0],
        };
        assert_eq!(aggregate_estimate(&[0.1, 0.9], &neg, 128).unwrap(), 1);
        assert_eq!(aggregate_estimate(&[0.9, 0.0], &neg, 128).unwrap(), 128);
        assert!(aggregate_estimate(&[0.1], &uniform, 128).is_err());
    }

    #[test]
    fn theorem2_closed_form_cases() {
        let c = ErrorCovariance::diagonal(&[1.0, 4.0]).unwrap();
        let r = theorem2_mc_check(&c, 20_000, 1).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(theorem2_mc_check(&c, 100, 1).is_err());
    }

    #[test]
    fn surrogate_examples() {
        let diag = ErrorCovariance::diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let d = diag_surrogate_diagnostics(&diag, &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!((d.r_inf, d.off_energy, d.mse_dev), (0.0, 0.0, 0.0));
        let c = ErrorCovariance::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let d = diag_surrogate_diagnostics(&c, &[0.5, 0.5]).unwrap();
        assert!((d.w_r_w - 0.25).abs() < 1e-15 && d.r_inf == 0.5 && d.bounds_hold);
        assert!(diag_surrogate_diagnostics(&c, &[1.0]).is_err());
    }

    #[test]
    fn empirical_covariance() {
        let rows = vec![vec![1.0, 2.0], vec![-1.0, -2.0]];
        let c = ErrorCovariance::empirical(&rows).unwrap();
        assert_eq!(c.matrix()[(0, 0)], 1.0);
        assert_eq!(c.matrix()[(0, 1)], 2.0);
        assert_eq!(c.matrix()[(1, 1)], 4.0);
    }
}
