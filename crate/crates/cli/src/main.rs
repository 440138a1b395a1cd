//! `overscale-lab`: budget-accuracy curves, overscaling analysis, policy
//! replay and budget estimation from trace and feature files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use overscale_core::policy::PolicyKind;
use overscale_core::TieRule;
use serde::Serialize;
use serde_json::json;

use crate::config::SchemaFailure;

#[derive(Parser)]
#[command(name = "overscale-lab", version, about = "Parallel-sampling budget analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Budget-accuracy curve of every question.
    Curves(CurvesArgs),
    /// Sample types, overscaling index and the overscaling bound.
    Analyze(AnalyzeArgs),
    /// Synthetic traces from a categorical answer-model recipe.
    Synth(SynthArgs),
    /// Planted-feature benchmark with paired traces.
    SynthFeatures(SynthFeaturesArgs),
    /// Replay budget policies over recorded traces.
    Policies(PoliciesArgs),
    /// Train one budget estimator per layer.
    Train(TrainArgs),
    /// Per-question budgets from a trained bundle.
    Estimate(EstimateArgs),
}

fn parse_tie(s: &str) -> Result<TieRule, String> {
    s.parse().map_err(|e: overscale_core::Error| e.to_string())
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse().map_err(|e: overscale_core::Error| e.to_string())
}

/// Flags shared by every command. Unset flags fall back to `--config`,
/// then to built-in defaults.
#[derive(Args, Serialize)]
struct Common {
    /// JSON file with default values for any flag (snake_case keys).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct CurveFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<PathBuf>,
    /// Subsets drawn per budget when enumeration is too large.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<u64>,
    #[arg(long, value_parser = parse_tie)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tie_rule: Option<TieRule>,
    /// Use the closed-form curve instead of subsampling.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    exact: bool,
}

#[derive(Args, Serialize)]
pub struct CurvesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    curve: CurveFlags,
}

#[derive(Args, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    curve: CurveFlags,
    /// Difference step of the monotonicity test (default floor(sqrt(N_max))).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    step: Option<usize>,
    /// Share of agreeing differences required for a monotone type.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Recipe file (JSON).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct SynthFeaturesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Benchmark recipe file (JSON); built-in sizes when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct PoliciesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<PathBuf>,
    /// Policies to run, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<Vec<PolicyKind>>,
    #[arg(long, value_parser = parse_tie)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tie_rule: Option<TieRule>,
    /// Global budget of the fixed-budget baseline (default: system optimum).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// Block size of the windowed policies.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_budget: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_consecutive: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    conf_threshold: Option<f64>,
    /// `question_id,budget` CSV written by `estimate`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    estimates: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Training features with labels.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<PathBuf>,
    /// Validation features; a seeded split of the training file when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
}

#[derive(Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<PathBuf>,
    /// Bundle written by `train`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bundle: Option<PathBuf>,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("OVERSCALE_LAB_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("OVERSCALE_LAB_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Curves(a) => commands::curves(&a, a.common.config.as_deref()),
        Command::Analyze(a) => commands::analyze(&a, a.common.config.as_deref()),
        Command::Synth(a) => commands::synth(&a, a.common.config.as_deref()),
        Command::SynthFeatures(a) => commands::synth_features(&a, a.common.config.as_deref()),
        Command::Policies(a) => commands::policies(&a, a.common.config.as_deref()),
        Command::Train(a) => commands::train(&a, a.common.config.as_deref()),
        Command::Estimate(a) => commands::estimate(&a, a.common.config.as_deref()),
    }
}

fn is_schema(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<SchemaFailure>().is_some()
            || e.downcast_ref::<overscale_core::Error>().is_some_and(overscale_core::Error::is_schema)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let schema = is_schema(&err);
            let report = json!({
                "error": {
                    "kind": if schema { "schema" } else { "runtime" },
                    "message": format!("{err:#}"),
                }
            });
            eprintln!("{report}");
            ExitCode::from(if schema { 2 } else { 1 })
        }
    }
}
