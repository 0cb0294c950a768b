use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use treat_core::data::{read_dataset, Dataset, Split};
use treat_core::model::{load_checkpoint, Model};
use treat_core::training::{evaluate, EvalReport};

use crate::config::{self, EvalRun, RUN_SCHEMA_VERSION};
use crate::exit;

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Which split of `--data` to score.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Prediction points behind the headline MSE and reversal metrics.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Comma-separated prediction lengths for the breakdown.
    #[arg(long, value_delimiter = ',')]
    pub buckets: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics path; defaults to `metrics.json` in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (expected train or test)")),
    }
}

pub fn resolve(args: &EvalArgs) -> anyhow::Result<EvalRun> {
    let mut run = match &args.config {
        Some(path) => config::load(path)?,
        None => EvalRun {
            schema_version: RUN_SCHEMA_VERSION,
            seed: 0,
            checkpoint: args
                .checkpoint
                .clone()
                .ok_or_else(|| exit::config("--checkpoint is required without --config"))?,
            data: args
                .data
                .clone()
                .ok_or_else(|| exit::config("--data is required without --config"))?,
            split: Split::Test,
            horizon: 20,
            buckets: vec![20, 40, 60],
        },
    };
    if let Some(p) = &args.checkpoint {
        run.checkpoint = p.clone();
    }
    if let Some(p) = &args.data {
        run.data = p.clone();
    }
    if let Some(s) = args.split {
        run.split = s;
    }
    if let Some(h) = args.horizon {
        run.horizon = h;
    }
    if let Some(b) = &args.buckets {
        run.buckets = b.clone();
    }
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if run.horizon < 2 {
        return Err(exit::config(format!("horizon must be at least 2, got {}", run.horizon)));
    }
    Ok(run)
}

/// Scores `model` on one split, sampling windows long enough for the
/// horizon and every bucket.
pub fn evaluate_split(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    horizon: usize,
    buckets: &[usize],
) -> anyhow::Result<EvalReport> {
    let feat = dataset
        .split(split)
        .next()
        .ok_or_else(|| exit::config(format!("dataset has no {split:?} trajectories").to_lowercase()))?
        .agent_dim();
    if model.config.input_dim != feat || model.config.output_dim != feat {
        return Err(exit::mismatch(format!(
            "checkpoint expects {} input / {} output features per agent, data has {feat}",
            model.config.input_dim, model.config.output_dim
        )));
    }
    let len = buckets.iter().copied().chain([horizon]).max().unwrap_or(horizon);
    let samples = dataset.samples(split, len)?;
    Ok(evaluate(model, &samples, horizon, buckets)?)
}

pub fn run(run: &EvalRun, out: &std::path::Path) -> anyhow::Result<EvalReport> {
    let model = load_checkpoint(&run.checkpoint).with_context(|| format!("loading {}", run.checkpoint.display()))?;
    let dataset = read_dataset(&run.data).with_context(|| format!("reading {}", run.data.display()))?;
    crate::write_json(&crate::sidecar(out, "config.json"), run)?;
    let report = evaluate_split(&model, &dataset, run.split, run.horizon, &run.buckets)?;
    crate::write_json(out, &report)?;
    Ok(report)
}
