//! Command bodies. Each resolves its configuration, runs the analysis and
//! writes its outputs into `--out`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use overscale_core::categorical::{synth_dataset, SynthSpec};
use overscale_core::estimator::{budgets_from_csv, budgets_to_csv, pipeline_estimate, train_bundle, EstimatorBundle, TrainConfig};
use overscale_core::metrics::{
    mean_curve, overscaling_index, per_question_optima, system_optimal_n, theorem1_check, type_gain_table,
    DEFAULT_EPS_ACC,
};
use overscale_core::policy::{
    cost_report, outcomes_to_csv, run_ac, run_dsc, run_esc, run_oracle, run_std_pt, run_t2, PolicyKind,
    DEFAULT_CONF_THRESHOLD, DEFAULT_DSC_K, DEFAULT_DSC_WINDOW, DEFAULT_ESC_WINDOW, DEFAULT_MAX_BUDGET,
};
use overscale_core::rng::{derive_seed, Key};
use overscale_core::synth_bench::{planted_benchmark, BenchSpec};
use overscale_core::trace::{load_features, load_traces, save_features, save_traces, FeatureDataset};
use overscale_core::vote::{curves_to_csv, dataset_curves, prefix_vote_curve};
use overscale_core::{partition, Curve, MonotonicityParams, SubsampleParams, TieRule, TraceDataset};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{resolve, SchemaFailure};
use crate::{AnalyzeArgs, CurvesArgs, EstimateArgs, PoliciesArgs, SynthArgs, SynthFeaturesArgs, TrainArgs};

/// The resolved configuration as echoed into reports. The output directory
/// is left out so that identical runs into different places agree byte for
/// byte.
fn echo<C: Serialize>(config: &C) -> Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Value::Object(m) = &mut v {
        m.remove("out");
    }
    v
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| SchemaFailure(format!("missing required `--{flag}`")).into())
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| SchemaFailure(format!("{what} {}: {e}", path.display())).into())
}

fn ids(ds: &TraceDataset) -> Vec<&str> {
    ds.traces.iter().map(|t| t.question_id.as_str()).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CurveConfig {
    out: PathBuf,
    seed: u64,
    traces: Option<PathBuf>,
    tau: u64,
    tie_rule: TieRule,
    exact: bool,
}

impl Default for CurveConfig {
    fn default() -> Self {
        let p = SubsampleParams::default();
        CurveConfig {
            out: PathBuf::from("."),
            seed: p.seed,
            traces: None,
            tau: p.tau,
            tie_rule: p.tie_rule,
            exact: false,
        }
    }
}

impl CurveConfig {
    fn compute(&self) -> anyhow::Result<(TraceDataset, Vec<Curve>)> {
        let ds = load_traces(required(&self.traces, "traces")?)?;
        let params = SubsampleParams {
            tau: self.tau,
            seed: self.seed,
            tie_rule: self.tie_rule,
        };
        let curves = dataset_curves(&ds, &params, self.exact)?;
        Ok((ds, curves))
    }
}

pub fn curves(args: &CurvesArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg: CurveConfig = resolve(args, config)?;
    let (ds, curves) = cfg.compute()?;
    let ids = ids(&ds);
    write(&cfg.out, "curves.csv", &curves_to_csv(&ids, &curves))?;
    let records: Vec<Value> = ids
        .iter()
        .zip(&curves)
        .map(|(id, c)| {
            json!({
                "question_id": id,
                "n_max": c.n_max,
                "estimator_meta": c.estimator_meta,
                "values": c.values,
            })
        })
        .collect();
    write(&cfg.out, "curves.json", &pretty(&json!({ "run_config": echo(&cfg), "curves": records })))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnalyzeConfig {
    out: PathBuf,
    seed: u64,
    traces: Option<PathBuf>,
    tau: u64,
    tie_rule: TieRule,
    exact: bool,
    step: Option<usize>,
    threshold: f64,
    eps_acc: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        let c = CurveConfig::default();
        AnalyzeConfig {
            out: c.out,
            seed: c.seed,
            traces: c.traces,
            tau: c.tau,
            tie_rule: c.tie_rule,
            exact: c.exact,
            step: None,
            threshold: MonotonicityParams::for_n_max(1).threshold,
            eps_acc: DEFAULT_EPS_ACC,
        }
    }
}

pub fn analyze(args: &AnalyzeArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg: AnalyzeConfig = resolve(args, config)?;
    let curve_cfg = CurveConfig {
        out: cfg.out.clone(),
        seed: cfg.seed,
        traces: cfg.traces.clone(),
        tau: cfg.tau,
        tie_rule: cfg.tie_rule,
        exact: cfg.exact,
    };
    let (ds, curves) = curve_cfg.compute()?;
    let ids = ids(&ds);
    let mut mono = MonotonicityParams::for_n_max(ds.n_max);
    mono.threshold = cfg.threshold;
    if let Some(step) = cfg.step {
        mono.step = step;
    }
    let part = partition(&curves, &mono)?;
    let report = overscaling_index(&curves, &part, cfg.eps_acc)?;
    let t1 = theorem1_check(&curves, &part, cfg.eps_acc)?;
    let analysis = json!({
        "run_config": echo(&cfg),
        "n_max": ds.n_max,
        "questions": ds.len(),
        "monotonicity": mono,
        "partition": part.to_json(&ids),
        "overscaling": report,
        "theorem1": t1.to_json(),
        "index_summary": {
            "n_star_d": report.n_star_dataset,
            "n_d": report.n_system,
            "m_d": report.index,
        },
    });
    let out = &cfg.out;
    write(out, "analysis.json", &pretty(&analysis))?;
    write(out, "taxonomy.csv", &part.to_csv(&ids))?;
    write(out, "type_gains.csv", &type_gain_table(&curves, &part, &report))?;

    let mut mean = String::from("N,accuracy\n");
    for (i, v) in mean_curve(&curves)?.iter().enumerate() {
        mean.push_str(&format!("{},{}\n", i + 1, v));
    }
    write(out, "mean_curve.csv", &mean)?;

    let optima = per_question_optima(&curves, cfg.eps_acc);
    let mut rows = String::from("question_id,type,n_star,max_acc\n");
    for ((id, t), o) in ids.iter().zip(&part.types).zip(&optima) {
        rows.push_str(&format!("{},{},{},{}\n", csv_field(id), t.number(), o.n_star, o.max_acc));
    }
    write(out, "per_question.csv", &rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    out: PathBuf,
    seed: Option<u64>,
    spec: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            out: PathBuf::from("."),
            seed: None,
            spec: None,
        }
    }
}

pub fn synth(args: &SynthArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg: SynthConfig = resolve(args, config)?;
    let mut spec: SynthSpec = read_json(required(&cfg.spec, "spec")?, "synth spec")?;
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    let synth = synth_dataset(&spec)?;
    fs::create_dir_all(&cfg.out)?;
    save_traces(&synth.dataset, cfg.out.join("traces.json"))?;
    write(&cfg.out, "intended_types.json", &synth.sidecar_json())?;
    let run = json!({ "run_config": echo(&cfg), "spec": spec });
    write(&cfg.out, "run_config.json", &pretty(&run))
}

pub fn synth_features(args: &SynthFeaturesArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg: SynthConfig = resolve(args, config)?;
    let mut spec = match &cfg.spec {
        Some(path) => read_json(path, "benchmark spec")?,
        None => BenchSpec::default(),
    };
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    let bench = planted_benchmark(&spec)?;
    fs::create_dir_all(&cfg.out)?;
    for (name, split) in [("train", &bench.train), ("validation", &bench.validation), ("test", &bench.test)] {
        save_features(&split.features, cfg.out.join(format!("features_{name}.json")))?;
        save_traces(&split.traces, cfg.out.join(format!("traces_{name}.json")))?;
    }
    let run = json!({ "run_config": echo(&cfg), "spec": spec });
    write(&cfg.out, "run_config.json", &pretty(&run))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PoliciesConfig {
    out: PathBuf,
    seed: u64,
    traces: Option<PathBuf>,
    policy: Option<Vec<PolicyKind>>,
    tie_rule: TieRule,
    n: Option<usize>,
    window: Option<usize>,
    max_budget: usize,
    k_consecutive: usize,
    conf_threshold: f64,
    estimates: Option<PathBuf>,
    eps_acc: f64,
}

impl Default for PoliciesConfig {
    fn default() -> Self {
        PoliciesConfig {
            out: PathBuf::from("."),
            seed: 0,
            traces: None,
            policy: None,
            tie_rule: TieRule::FirstSeen,
            n: None,
            window: None,
            max_budget: DEFAULT_MAX_BUDGET,
            k_consecutive: DEFAULT_DSC_K,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            estimates: None,
            eps_acc: DEFAULT_EPS_ACC,
        }
    }
}

fn load_estimates(path: &Path, ds: &TraceDataset) -> anyhow::Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read estimates {}", path.display()))?;
    let map: HashMap<String, usize> = budgets_from_csv(&text)?.into_iter().collect();
    ds.traces
        .iter()
        .map(|t| {
            map.get(&t.question_id)
                .copied()
                .ok_or_else(|| SchemaFailure(format!("estimates have no budget for `{}`", t.question_id)).into())
        })
        .collect()
}

pub fn policies(args: &PoliciesArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg: PoliciesConfig = resolve(args, config)?;
    let ds = load_traces(required(&cfg.traces, "traces")?)?;
    let tie = cfg.tie_rule;
    let kinds = cfg.policy.clone().unwrap_or_else(|| {
        let mut all = vec![PolicyKind::StdPt, PolicyKind::Oracle, PolicyKind::Ac, PolicyKind::Esc, PolicyKind::Dsc];
        if cfg.estimates.is_some() {
            all.push(PolicyKind::T2);
        }
        all
    });

    // replay curves: what a policy reading draws in order actually gets
    let curves: Vec<Curve> = ds.traces.iter().map(|t| prefix_vote_curve(t, tie)).collect();
    let n_system = system_optimal_n(&curves, cfg.eps_acc)?;
    let optima = per_question_optima(&curves, cfg.eps_acc);
    let m_d = optima.iter().map(|o| o.n_star as f64).sum::<f64>() / optima.len() as f64 / n_system as f64;
    let baseline_n = cfg.n.unwrap_or(n_system);
    let baseline = run_std_pt(&ds, baseline_n, tie)?;

    let mut summary = BTreeMap::new();
    for kind in kinds {
        let outcomes = match kind {
            PolicyKind::StdPt => baseline.clone(),
            PolicyKind::Oracle => run_oracle(&ds, &curves, cfg.eps_acc, tie)?,
            PolicyKind::Ac => run_ac(&ds, cfg.max_budget, cfg.conf_threshold, tie)?,
            PolicyKind::Esc => run_esc(&ds, cfg.window.unwrap_or(DEFAULT_ESC_WINDOW), cfg.max_budget, tie)?,
            PolicyKind::Dsc => run_dsc(
                &ds,
                cfg.window.unwrap_or(DEFAULT_DSC_WINDOW),
                cfg.k_consecutive,
                cfg.max_budget,
                tie,
            )?,
            PolicyKind::T2 => {
                let path = cfg
                    .estimates
                    .as_deref()
                    .ok_or_else(|| anyhow!("policy t2 needs `--estimates`"))?;
                run_t2(&ds, &load_estimates(path, &ds)?, tie)?
            }
        };
        let cost = cost_report(&outcomes, &baseline)?;
        write(&cfg.out, &format!("outcomes_{}.csv", kind.name()), &outcomes_to_csv(&outcomes))?;
        summary.insert(
            kind.name(),
            json!({
                "c_mem": cost.c_mem_proxy,
                "c_time": cost.c_time_proxy,
                "accuracy": cost.accuracy,
                "mean_samples": cost.mean_samples,
                "mean_rounds": cost.mean_rounds,
            }),
        );
    }
    let doc = json!({
        "run_config": echo(&cfg),
        "questions": ds.len(),
        "n_max": ds.n_max,
        "baseline_n": baseline_n,
        "n_system": n_system,
        "m_d": m_d,
        "policies": summary,
    });
    write(&cfg.out, "summary.json", &pretty(&doc))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRunConfig {
    out: PathBuf,
    seed: u64,
    features: Option<PathBuf>,
    validation: Option<PathBuf>,
    /// Share of the training file held out when no validation file is given.
    val_fraction: f64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    weight_decay: f64,
    hidden_ratio: f64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainRunConfig {
            out: PathBuf::from("."),
            seed: t.seed,
            features: None,
            validation: None,
            val_fraction: 0.2,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            hidden_ratio: t.hidden_ratio,
        }
    }
}

/// Seeded split: records whose keyed hash ranks lowest go to validation.
fn holdout(ds: &FeatureDataset, fraction: f64, seed: u64) -> anyhow::Result<(FeatureDataset, FeatureDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(anyhow!("val_fraction must lie in (0, 1), got {fraction}"));
    }
    let n = ds.records.len();
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    if n < 2 {
        return Err(anyhow!("need at least two records to hold out a validation split"));
    }
    let mut order: Vec<(u64, usize)> = ds
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (derive_seed(seed, &[Key::Str("val_split"), Key::Str(&r.question_id)]), i))
        .collect();
    order.sort_unstable();
    let mut is_val = vec![false; n];
    order[..k].iter().for_each(|&(_, i)| is_val[i] = true);
    let pick = |want: bool| {
        let records = ds
            .records
            .iter()
            .zip(&is_val)
            .filter(|(_, &v)| v == want)
            .map(|(r, _)| r.clone())
            .collect();
        FeatureDataset::new(ds.n_max, ds.layers, ds.dim, records)
    };
    Ok((pick(false)?, pick(true)?))
}

pub fn train(args: &TrainArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg: TrainRunConfig = resolve(args, config)?;
    let features = load_features(required(&cfg.features, "features")?)?;
    let (train_set, val_set) = match &cfg.validation {
        Some(path) => (features, load_features(path)?),
        None => holdout(&features, cfg.val_fraction, cfg.seed)?,
    };
    let tc = TrainConfig {
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        hidden_ratio: cfg.hidden_ratio,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let (mut bundle, reports) = train_bundle(&train_set, &val_set, &tc)?;
    bundle.run_config = Some(echo(&cfg));
    write(&cfg.out, "bundle.json", &bundle.to_json())?;
    let doc = json!({
        "run_config": echo(&cfg),
        "train_records": train_set.records.len(),
        "validation_records": val_set.records.len(),
        "layers": reports,
        "weights": bundle.weights,
        "sigma_hat_sq": bundle.sigma_hat_sq,
    });
    write(&cfg.out, "training.json", &pretty(&doc))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EstimateConfig {
    out: PathBuf,
    seed: u64,
    features: Option<PathBuf>,
    bundle: Option<PathBuf>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            out: PathBuf::from("."),
            seed: 0,
            features: None,
            bundle: None,
        }
    }
}

pub fn estimate(args: &EstimateArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg: EstimateConfig = resolve(args, config)?;
    let features = load_features(required(&cfg.features, "features")?)?;
    let bundle_path = required(&cfg.bundle, "bundle")?;
    let text = fs::read_to_string(bundle_path).with_context(|| format!("cannot read bundle {}", bundle_path.display()))?;
    let bundle = EstimatorBundle::from_json_str(&text)?;
    let budgets = pipeline_estimate(&features, &bundle)?;
    let ids: Vec<&str> = features.records.iter().map(|r| r.question_id.as_str()).collect();
    write(&cfg.out, "estimates.csv", &budgets_to_csv(&ids, &budgets))?;

    let n_max = features.n_max as f64;
    let labelled: Vec<f64> = features
        .records
        .iter()
        .zip(&budgets)
        .filter_map(|(r, &b)| r.label.map(|y| (b as f64 / n_max - y).abs()))
        .collect();
    let mae = (labelled.len() == budgets.len() && !labelled.is_empty())
        .then(|| labelled.iter().sum::<f64>() / labelled.len() as f64);
    let rows: Vec<Value> = ids
        .iter()
        .zip(&budgets)
        .map(|(id, &b)| json!({ "question_id": id, "budget": b, "normalized": b as f64 / n_max }))
        .collect();
    let doc = json!({
        "run_config": echo(&cfg),
        "n_max": features.n_max,
        "normalized_mae": mae,
        "estimates": rows,
    });
    write(&cfg.out, "estimates.json", &pretty(&doc))
}
