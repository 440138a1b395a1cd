//! Planted-feature benchmark for the budget estimators.
//!
//! Each question has a latent `z`. Its trace holds `N_max - o` gold draws and
//! `o = floor(max_wrong * sigmoid(w . z))` wrong draws in random order, and its
//! label is the normalized optimal budget of that trace's exact curve. Layer
//! `l` observes `A_l z` plus Gaussian noise of scale `noise[l]`, so layers
//! differ in how much of the label they reveal.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{sample_optimal_n, DEFAULT_EPS_ACC};
use crate::rng::{self, Key};
use crate::trace::{AnswerId, FeatureDataset, LayerFeatureSet, QuestionTrace, SamplingConfig, TraceDataset};
use crate::vote::{exact_budget_accuracy_curve, TieRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub n_max: usize,
    pub dim: usize,
    pub latent: usize,
    /// Noise scale of every layer; its length is the layer count.
    pub noise: Vec<f64>,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub max_wrong: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            n_max: 128,
            dim: 64,
            latent: 8,
            noise: vec![2.0, 1.2, 0.6, 0.4, 0.8, 1.6],
            n_train: 5000,
            n_validation: 5000,
            n_test: 2000,
            max_wrong: 60,
            seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn layers(&self) -> usize {
        self.noise.len()
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.latent == 0 || self.noise.is_empty() {
            return Err(Error::InvalidArgument("dim, latent and layer count must be positive".into()));
        }
        if 2 * self.max_wrong >= self.n_max {
            return Err(Error::InvalidArgument(format!(
                "max_wrong {} must stay below half of n_max {}",
                self.max_wrong, self.n_max
            )));
        }
        if self.noise.iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err(Error::InvalidArgument("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// One split: features with labels and the traces they were derived from.
#[derive(Debug, Clone)]
pub struct BenchSplit {
    pub features: FeatureDataset,
    pub traces: TraceDataset,
}

#[derive(Debug, Clone)]
pub struct Bench {
    pub train: BenchSplit,
    pub validation: BenchSplit,
    pub test: BenchSplit,
}

struct Planted {
    readout: Vec<f64>,
    layers: Vec<Vec<Vec<f64>>>,
}

impl Planted {
    fn new(spec: &BenchSpec) -> Self {
        let mut rng = rng::stream(spec.seed, &[Key::Str("planted")]);
        let scale = 1.0 / (spec.latent as f64).sqrt();
        let mut gauss = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
        // readout scaled so w . z has unit-order spread
        let readout = (0..spec.latent).map(|_| gauss(1.5 * scale)).collect();
        let layers = (0..spec.layers())
            .map(|_| {
                (0..spec.dim)
                    .map(|_| (0..spec.latent).map(|_| gauss(scale)).collect())
                    .collect()
            })
            .collect();
        Planted { readout, layers }
    }
}

fn split(spec: &BenchSpec, planted: &Planted, name: &str, count: usize) -> Result<BenchSplit> {
    let rows = (0..count)
        .into_par_iter()
        .map(|i| {
            let qid = format!("{name}-{i:05}");
            let mut rng = rng::stream(spec.seed, &[Key::Str(&qid)]);
            let z: Vec<f64> = (0..spec.latent).map(|_| rng.sample(StandardNormal)).collect();
            let score: f64 = planted.readout.iter().zip(&z).map(|(a, b)| a * b).sum();
            let wrong = (spec.max_wrong as f64 / (1.0 + (-score).exp())).floor() as usize;

            let mut draws: Vec<AnswerId> = (0..spec.n_max).map(|k| AnswerId((k < wrong) as u32)).collect();
            draws.shuffle(&mut rng);
            // relabel so the first answer seen gets id 0
            if draws[0] == AnswerId(1) {
                draws.iter_mut().for_each(|a| a.0 = 1 - a.0);
            }
            let zeros = draws.iter().filter(|a| a.0 == 0).count();
            let gold = AnswerId((zeros != spec.n_max - wrong) as u32);
            let trace = QuestionTrace::new(qid.clone(), Some(gold), draws)?;
            let curve = exact_budget_accuracy_curve(&trace, TieRule::Fractional)?;
            let label = sample_optimal_n(&curve, DEFAULT_EPS_ACC).n_star as f64 / spec.n_max as f64;

            let vectors = planted
                .layers
                .iter()
                .zip(&spec.noise)
                .map(|(a, &sigma)| {
                    a.iter()
                        .map(|row| {
                            let signal: f64 = row.iter().zip(&z).map(|(x, y)| x * y).sum();
                            signal + sigma * rng.sample::<f64, _>(StandardNormal)
                        })
                        .collect()
                })
                .collect();
            Ok((
                trace,
                LayerFeatureSet {
                    question_id: qid,
                    layer_vectors: vectors,
                    label: Some(label),
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (traces, records): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let config = SamplingConfig {
        model_name: "planted-benchmark".into(),
        seed: spec.seed as i64,
        ..SamplingConfig::default()
    };
    let mut features = FeatureDataset::new(spec.n_max, spec.layers(), spec.dim, records)?;
    features.sampling_config = config.clone();
    Ok(BenchSplit {
        features,
        traces: TraceDataset::new(spec.n_max, config, traces)?,
    })
}

pub fn planted_benchmark(spec: &BenchSpec) -> Result<Bench> {
    spec.validate()?;
    let planted = Planted::new(spec);
    Ok(Bench {
        train: split(spec, &planted, "train", spec.n_train)?,
        validation: split(spec, &planted, "val", spec.n_validation)?,
        test: split(spec, &planted, "test", spec.n_test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::answer_counts;

    fn small() -> BenchSpec {
        BenchSpec {
            n_max: 32,
            dim: 8,
            latent: 3,
            noise: vec![0.5, 1.0],
            n_train: 20,
            n_validation: 10,
            n_test: 10,
            max_wrong: 12,
            seed: 4,
        }
    }

    #[test]
    fn gold_holds_the_majority() {
        let b = planted_benchmark(&small()).unwrap();
        for t in &b.test.traces.traces {
            let c = answer_counts(t);
            let g = t.gold.unwrap().index();
            assert!(c.iter().enumerate().all(|(j, &v)| j == g || v < c[g]));
        }
    }

    #[test]
    fn labels_follow_the_exact_curve() {
        let b = planted_benchmark(&small()).unwrap();
        for (t, r) in b.train.traces.traces.iter().zip(&b.train.features.records) {
            let wrong = 32 - answer_counts(t)[t.gold.unwrap().index()];
            let label = r.label.unwrap() * 32.0;
            assert!(label >= 1.0 && label <= (2 * wrong + 1) as f64);
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = planted_benchmark(&small()).unwrap();
        let b = planted_benchmark(&small()).unwrap();
        assert_eq!(a.validation.features, b.validation.features);
        assert_eq!(a.test.traces, b.test.traces);
        assert_eq!(a.train.features.records.len(), 20);
        assert_eq!(a.train.features.layers, 2);
        let bad = BenchSpec { max_wrong: 16, ..small() };
        assert!(planted_benchmark(&bad).is_err());
    }
}
