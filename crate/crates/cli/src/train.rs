use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Serialize;
use treat_core::data::{read_dataset, Dataset, Split};
use treat_core::model::save_checkpoint;
use treat_core::training::{self, EvalReport, LossVariant, TrainOutcome, TrainingConfig};

use crate::config::{self, TrainRun, RUN_SCHEMA_VERSION};
use crate::{eval, exit};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run document to start from; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset written by `simulate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Separate test dataset; defaults to the test split of `--data`.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub loss_variant: Option<LossVariant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub predict_len: Option<usize>,
    /// Width of the encoder and ODE networks.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split batches across threads. Results then depend on the thread count.
    #[arg(long)]
    pub parallel: bool,
    /// Desk-scale defaults: batch 32 and 20/40/60 evaluation buckets.
    #[arg(long)]
    pub desk_scale: bool,
    /// Comma-separated prediction lengths for the summary breakdown.
    #[arg(long, value_delimiter = ',')]
    pub buckets: Option<Vec<usize>>,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub loss_variant: LossVariant,
    pub alpha: f64,
    /// Learning rate of the run that produced the checkpoint.
    pub lr: f64,
    pub retried: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub final_l_pred: f64,
    pub final_l_reverse: f64,
    pub best_val_mse: f64,
    /// Absent when there are no test trajectories.
    pub test: Option<EvalReport>,
}

pub fn resolve(args: &TrainArgs) -> anyhow::Result<TrainRun> {
    let mut run = match &args.config {
        Some(path) => {
            let run: TrainRun = config::load(path)?;
            config::check_seed("training.seed", run.seed, run.training.seed)?;
            run
        }
        None => {
            let data = args
                .data
                .clone()
                .ok_or_else(|| exit::config("--data is required without --config"))?;
            let mut training = TrainingConfig::new(0.5, LossVariant::Treat);
            let mut buckets = Vec::new();
            if args.desk_scale {
                buckets = vec![20, 40, 60];
            } else {
                training.batch_size = 512;
            }
            TrainRun {
                schema_version: RUN_SCHEMA_VERSION,
                seed: 0,
                data,
                test_data: None,
                training,
                buckets,
            }
        }
    };
    let t = &mut run.training;
    if let Some(p) = &args.data {
        run.data = p.clone();
    }
    if let Some(p) = &args.test_data {
        run.test_data = Some(p.clone());
    }
    if let Some(v) = args.loss_variant {
        t.loss_variant = v;
        if v == LossVariant::None && args.alpha.is_none() {
            t.alpha = 0.0;
        }
    }
    if let Some(v) = args.alpha {
        t.alpha = v;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.patience {
        t.patience = (v > 0).then_some(v);
    }
    if let Some(v) = args.predict_len {
        t.predict_len = v;
    }
    if let Some(v) = args.hidden {
        t.model.enc_hidden = v;
        t.model.ode_hidden = v;
    }
    if args.parallel {
        t.parallel = true;
    }
    if let Some(b) = &args.buckets {
        run.buckets = b.clone();
    }
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    run.training.seed = run.seed;
    run.training.validate()?;
    Ok(run)
}

/// Trains, retrying once at half the learning rate if the first attempt
/// diverges.
pub fn fit(dataset: &Dataset, cfg: &TrainingConfig) -> anyhow::Result<(TrainOutcome, bool)> {
    match training::train(dataset, cfg) {
        Ok(out) => Ok((out, false)),
        Err(e) if exit::is_divergence(&e) => {
            eprintln!("warning: {e}; retrying with lr {:e}", cfg.lr / 2.0);
            let retry = TrainingConfig {
                lr: cfg.lr / 2.0,
                ..cfg.clone()
            };
            let out = training::train(dataset, &retry).context("training diverged again after halving lr")?;
            Ok((out, true))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn run(run: &TrainRun, outdir: &Path) -> anyhow::Result<TrainSummary> {
    let dataset = read_dataset(&run.data).with_context(|| format!("reading {}", run.data.display()))?;
    if dataset.split(Split::Train).next().is_none() {
        return Err(exit::config(format!("{} has no training trajectories", run.data.display())));
    }
    let test = match &run.test_data {
        Some(p) => read_dataset(p).with_context(|| format!("reading {}", p.display()))?,
        None => dataset.clone(),
    };
    crate::write_json(&outdir.join("config.json"), run)?;

    let (out, retried) = fit(&dataset, &run.training)?;
    save_checkpoint(outdir.join("checkpoint.json"), &out.model)?;
    crate::write_text(&outdir.join("losses.csv"), &out.report.to_csv())?;

    let report = if test.split(Split::Test).next().is_some() {
        Some(eval::evaluate_split(&out.model, &test, Split::Test, run.training.predict_len, &run.buckets)?)
    } else {
        None
    };
    let last = out.report.epochs.last().expect("at least one epoch");
    let summary = TrainSummary {
        loss_variant: out.report.loss_variant,
        alpha: out.report.alpha,
        lr: out.report.lr,
        retried,
        epochs_run: out.report.epochs.len(),
        best_epoch: out.report.best_epoch,
        stopped_early: out.report.stopped_early,
        final_l_pred: last.l_pred,
        final_l_reverse: last.l_reverse,
        best_val_mse: out.report.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min),
        test: report,
    };
    crate::write_json(&outdir.join("summary.json"), &summary)?;
    Ok(summary)
}
