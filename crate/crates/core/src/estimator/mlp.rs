//! Single-hidden-layer regression probe `sigmoid(w2 . relu(W1 h + b1) + b2)`
//! and its AdamW trainer.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Key};
use crate::scalar::{real, Real};

/// Hidden size as a fraction of the input dimension.
pub const DEFAULT_HIDDEN_RATIO: f64 = 0.125;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct MlpEstimator<T = f64> {
    /// `h x d`, row per hidden unit.
    pub w1: Vec<Vec<T>>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

/// `floor(ratio * d)`, rejected when that leaves no hidden unit.
pub fn hidden_size(dim: usize, ratio: f64) -> Result<usize> {
    let h = (ratio * dim as f64).floor();
    if h.is_nan() || h < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "hidden ratio {ratio} leaves no hidden unit for dimension {dim}"
        )));
    }
    Ok(h as usize)
}

fn sigmoid<T: Real>(z: T) -> T {
    if z.is_nan() {
        return z;
    }
    let one = T::one();
    let s = if z >= T::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    };
    // keep the output inside the open unit interval
    s.max(T::min_positive_value()).min(one - T::epsilon())
}

impl<T: Real> MlpEstimator<T> {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        MlpEstimator {
            w1: vec![vec![T::zero(); dim]; hidden],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden],
            b2: T::zero(),
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init(dim: usize, hidden_ratio: f64, seed: u64) -> Result<Self> {
        let hidden = hidden_size(dim, hidden_ratio)?;
        let mut rng = rng::stream(seed, &[Key::Str("mlp_init")]);
        let mut uniform = |fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            real::<T>(rng.random_range(-a..=a))
        };
        let mut est = Self::zeros(dim, hidden);
        for row in &mut est.w1 {
            row.iter_mut().for_each(|w| *w = uniform(dim));
        }
        est.b1.iter_mut().for_each(|b| *b = uniform(dim));
        est.w2.iter_mut().for_each(|w| *w = uniform(hidden));
        est.b2 = uniform(hidden);
        Ok(est)
    }

    pub fn dim(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden(), self.dim());
        if h == 0 || d == 0 {
            return Err(Error::InvalidArgument("estimator needs h >= 1 and d >= 1".into()));
        }
        if self.w1.len() != h || self.w2.len() != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                got: self.w1.len().min(self.w2.len()),
            });
        }
        if let Some(row) = self.w1.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: row.len() });
        }
        Ok(())
    }

    /// Prediction for one feature vector.
    pub fn forward(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut hidden = vec![T::zero(); self.hidden()];
        Ok(self.forward_into(x, &mut hidden))
    }

    /// Fills `pre` with the hidden pre-activations and returns the output.
    fn forward_into(&self, x: &[T], pre: &mut [T]) -> T {
        let mut z = self.b2;
        for (j, row) in self.w1.iter().enumerate() {
            let u = row.iter().zip(x).fold(self.b1[j], |acc, (&w, &xi)| acc + w * xi);
            pre[j] = u;
            if u > T::zero() {
                z = z + self.w2[j] * u;
            }
        }
        sigmoid(z)
    }

    /// Mean squared loss over a batch, accumulating its gradient into `grad`.
    pub fn loss_and_grad(&self, xs: &[&[T]], ys: &[T], grad: &mut MlpEstimator<T>) -> T {
        grad.fill_zero();
        let scale: T = real(1.0 / xs.len() as f64);
        let two: T = real(2.0);
        let mut pre = vec![T::zero(); self.hidden()];
        let mut loss = T::zero();
        for (x, &y) in xs.iter().zip(ys) {
            let out = self.forward_into(x, &mut pre);
            let r = out - y;
            loss = loss + r * r;
            let gz = two * r * out * (T::one() - out) * scale;
            grad.b2 = grad.b2 + gz;
            for (j, &u) in pre.iter().enumerate() {
                if u <= T::zero() {
                    continue;
                }
                grad.w2[j] = grad.w2[j] + gz * u;
                let gu = gz * self.w2[j];
                grad.b1[j] = grad.b1[j] + gu;
                for (g, &xi) in grad.w1[j].iter_mut().zip(x.iter()) {
                    *g = *g + gu * xi;
                }
            }
        }
        loss * scale
    }

    fn fill_zero(&mut self) {
        self.w1.iter_mut().flatten().for_each(|v| *v = T::zero());
        self.b1.iter_mut().for_each(|v| *v = T::zero());
        self.w2.iter_mut().for_each(|v| *v = T::zero());
        self.b2 = T::zero();
    }

    /// Mutable views of every parameter, in a fixed order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.w1
            .iter_mut()
            .flatten()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.w1
            .iter()
            .flatten()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(std::iter::once(&self.b2))
    }

    pub fn num_params(&self) -> usize {
        self.hidden() * (self.dim() + 2) + 1
    }
}

/// Largest relative error between the analytic gradient and central finite
/// differences of step `step`, over all parameters.
pub fn gradient_check(est: &MlpEstimator<f64>, xs: &[&[f64]], ys: &[f64], step: f64) -> f64 {
    let mut grad = MlpEstimator::zeros(est.dim(), est.hidden());
    est.loss_and_grad(xs, ys, &mut grad);
    let analytic: Vec<f64> = grad.params().copied().collect();
    let mut probe = est.clone();
    let mut scratch = grad;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let base = *probe.params().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = base + step;
        let up = probe.loss_and_grad(xs, ys, &mut scratch);
        *probe.params_mut().nth(i).unwrap() = base - step;
        let down = probe.loss_and_grad(xs, ys, &mut scratch);
        *probe.params_mut().nth(i).unwrap() = base;
        let numeric = (up - down) / (2.0 * step);
        let denom = a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub hidden_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 300,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            hidden_ratio: DEFAULT_HIDDEN_RATIO,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.hidden_ratio > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0;
        if self.batch_size == 0 || self.epochs == 0 || !positive {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T = f64> {
    pub estimator: MlpEstimator<T>,
    /// Mean training loss of every epoch.
    pub losses: Vec<f64>,
}

/// Trains a fresh estimator on `(xs, ys)`.
pub fn train_estimator<T: Real>(xs: &[Vec<T>], ys: &[T], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    if xs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let dim = xs[0].len();
    let init = MlpEstimator::init(dim, cfg.hidden_ratio, cfg.seed)?;
    train_from(init, xs, ys, cfg)
}

/// Continues training `est` with AdamW (decoupled weight decay on every
/// parameter) over shuffled minibatches.
pub fn train_from<T: Real>(
    mut est: MlpEstimator<T>,
    xs: &[Vec<T>],
    ys: &[T],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    est.validate()?;
    if xs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if let Some(x) = xs.iter().find(|x| x.len() != est.dim()) {
        return Err(Error::DimensionMismatch {
            expected: est.dim(),
            got: x.len(),
        });
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features must be finite".into()));
    }
    if ys.iter().any(|&y| !(y >= T::zero() && y <= T::one())) {
        return Err(Error::InvalidArgument("labels must lie in [0, 1]".into()));
    }

    let (h, d) = (est.hidden(), est.dim());
    let mut grad = MlpEstimator::zeros(d, h);
    let n_params = est.num_params();
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;
    let mut batch_x: Vec<&[T]> = Vec::with_capacity(cfg.batch_size);
    let mut batch_y: Vec<T> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, &[Key::Str("epoch"), Key::Int(epoch as u64)]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| xs[i].as_slice()));
            batch_y.extend(chunk.iter().map(|&i| ys[i]));
            let loss = est.loss_and_grad(&batch_x, &batch_y, &mut grad).to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;

            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
            for (((p, g), mi), vi) in est.params_mut().zip(grad.params()).zip(&mut m).zip(&mut v) {
                let g = g.to_f64().unwrap();
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                let update = cfg.learning_rate * (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.adam_eps);
                *p = real::<T>(p.to_f64().unwrap() * decay - update);
            }
        }
        losses.push(epoch_loss / xs.len() as f64);
    }
    Ok(TrainOutcome { estimator: est, losses })
}

fn residuals<'a, T: Real>(
    est: &'a MlpEstimator<T>,
    xs: &'a [Vec<T>],
    ys: &'a [T],
) -> Result<impl Iterator<Item = Result<f64>> + 'a> {
    if xs.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    Ok(xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| Ok((est.forward(x)? - y).to_f64().unwrap())))
}

/// Mean squared residual on the normalized scale.
pub fn validation_mse<T: Real>(est: &MlpEstimator<T>, xs: &[Vec<T>], ys: &[T]) -> Result<f64> {
    let sum = residuals(est, xs, ys)?.try_fold(0.0, |acc, r| r.map(|r| acc + r * r))?;
    Ok(sum / xs.len() as f64)
}

/// Mean absolute residual on the normalized scale.
pub fn validation_mae<T: Real>(est: &MlpEstimator<T>, xs: &[Vec<T>], ys: &[T]) -> Result<f64> {
    let sum = residuals(est, xs, ys)?.try_fold(0.0, |acc, r| r.map(|r| acc + r.abs()))?;
    Ok(sum / xs.len() as f64)
}
