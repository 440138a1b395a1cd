//! Layer-wise estimators of the normalized optimal budget and their
//! aggregation into one per-question budget.

pub mod aggregate;
pub mod mlp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Key};
use crate::trace::FeatureDataset;

pub use aggregate::{
    aggregate_estimate, diag_surrogate_diagnostics, gls_weights, inverse_variance_weights, theorem2_mc_check,
    ErrorCovariance, LayerWeightVector, SurrogateDiagnostics, Theorem2Report,
};
pub use mlp::{gradient_check, train_estimator, validation_mae, validation_mse, MlpEstimator, TrainConfig};

/// Trained estimators for every layer plus their aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorBundle {
    pub layers: usize,
    pub dim: usize,
    pub hidden_ratio: f64,
    pub estimators: Vec<MlpEstimator<f64>>,
    pub sigma_hat_sq: Vec<f64>,
    pub weights: Vec<f64>,
    /// Configuration that produced the bundle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl EstimatorBundle {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.estimators.len() != self.layers {
            return Err(Error::schema("bundle", "estimators", "one estimator per layer required"));
        }
        if self.weights.len() != self.layers || self.sigma_hat_sq.len() != self.layers {
            return Err(Error::schema("bundle", "weights", "one weight and variance per layer required"));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::schema("bundle", "weights", "weights must sum to 1"));
        }
        for (l, e) in self.estimators.iter().enumerate() {
            e.validate()
                .and_then(|_| {
                    if e.dim() == self.dim {
                        Ok(())
                    } else {
                        Err(Error::DimensionMismatch {
                            expected: self.dim,
                            got: e.dim(),
                        })
                    }
                })
                .map_err(|err| Error::schema(format!("bundle estimator {l}"), "w1", err.to_string()))?;
        }
        Ok(())
    }

    pub fn weight_vector(&self) -> LayerWeightVector {
        LayerWeightVector {
            weights: self.weights.clone(),
            sigma_hat_sq: self.sigma_hat_sq.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let b: EstimatorBundle =
            serde_json::from_str(text).map_err(|e| Error::schema("bundle", "<json>", e.to_string()))?;
        b.validate()?;
        Ok(b)
    }
}

/// Per-layer training summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub validation_mse: f64,
    pub validation_mae: f64,
    pub final_train_loss: f64,
}

fn layer_xy(ds: &FeatureDataset, layer: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    ds.records
        .iter()
        .map(|r| {
            let y = r
                .label
                .ok_or_else(|| Error::schema(format!("features `{}`", r.question_id), "label", "label required"))?;
            Ok((r.layer_vectors[layer].clone(), y))
        })
        .collect::<Result<Vec<_>>>()
        .map(|pairs| pairs.into_iter().unzip())
}

/// Trains one estimator per layer (layers in parallel, each with its own
/// derived seed) and weights them by inverse validation MSE.
pub fn train_bundle(
    train: &FeatureDataset,
    validation: &FeatureDataset,
    cfg: &TrainConfig,
) -> Result<(EstimatorBundle, Vec<LayerReport>)> {
    if train.layers != validation.layers || train.dim != validation.dim {
        return Err(Error::DimensionMismatch {
            expected: train.layers * train.dim,
            got: validation.layers * validation.dim,
        });
    }
    if validation.records.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let trained: Vec<(MlpEstimator<f64>, LayerReport)> = (0..train.layers)
        .into_par_iter()
        .map(|layer| {
            let (xs, ys) = layer_xy(train, layer)?;
            let layer_cfg = TrainConfig {
                seed: rng::derive_seed(cfg.seed, &[Key::Str("layer"), Key::Int(layer as u64)]),
                ..*cfg
            };
            let out = train_estimator(&xs, &ys, &layer_cfg)?;
            let (vx, vy) = layer_xy(validation, layer)?;
            let report = LayerReport {
                layer,
                validation_mse: validation_mse(&out.estimator, &vx, &vy)?,
                validation_mae: validation_mae(&out.estimator, &vx, &vy)?,
                final_train_loss: *out.losses.last().expect("at least one epoch"),
            };
            Ok((out.estimator, report))
        })
        .collect::<Result<_>>()?;
    let (estimators, reports): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    let sigma: Vec<f64> = reports.iter().map(|r| r.validation_mse).collect();
    let weights = inverse_variance_weights(&sigma)?;
    let bundle = EstimatorBundle {
        layers: train.layers,
        dim: train.dim,
        hidden_ratio: cfg.hidden_ratio,
        estimators,
        sigma_hat_sq: weights.sigma_hat_sq,
        weights: weights.weights,
        run_config: None,
    };
    Ok((bundle, reports))
}

/// Normalized per-layer predictions, one row per feature record.
pub fn layer_predictions(features: &FeatureDataset, bundle: &EstimatorBundle) -> Result<Vec<Vec<f64>>> {
    if features.layers != bundle.layers {
        return Err(Error::DimensionMismatch {
            expected: bundle.layers,
            got: features.layers,
        });
    }
    features
        .records
        .par_iter()
        .map(|r| {
            r.layer_vectors
                .iter()
                .zip(&bundle.estimators)
                .map(|(x, e)| e.forward(x))
                .collect()
        })
        .collect()
}

/// Integer budgets for every feature record.
pub fn pipeline_estimate(features: &FeatureDataset, bundle: &EstimatorBundle) -> Result<Vec<usize>> {
    let weights = bundle.weight_vector();
    layer_predictions(features, bundle)?
        .iter()
        .map(|p| aggregate_estimate(p, &weights, features.n_max))
        .collect()
}

/// CSV `question_id,budget`.
pub fn budgets_to_csv(ids: &[&str], budgets: &[usize]) -> String {
    let mut out = String::from("question_id,budget\n");
    for (id, b) in ids.iter().zip(budgets) {
        out.push_str(&format!("{},{}\n", crate::vote::csv_field(id), b));
    }
    out
}

/// Parses the `question_id,budget` CSV written by [`budgets_to_csv`].
pub fn budgets_from_csv(text: &str) -> Result<Vec<(String, usize)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("question_id,budget") {
        return Err(Error::schema("estimates", "header", "expected `question_id,budget`"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, b) = l
                .rsplit_once(',')
                .ok_or_else(|| Error::schema("estimates", "row", format!("malformed row `{l}`")))?;
            let id = id.trim_matches('"').replace("\"\"", "\"");
            let b = b
                .trim()
                .parse()
                .map_err(|_| Error::schema(format!("estimate `{id}`"), "budget", "not an integer"))?;
            Ok((id, b))
        })
        .collect()
}
