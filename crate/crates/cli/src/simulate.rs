use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Serialize;
use treat_core::data::{generate_dataset, write_dataset, DatasetConfig};
use treat_core::dynamics::Scheme;
use treat_core::physics::SystemKind;

use crate::config::{self, SimulateRun, RUN_SCHEMA_VERSION};
use crate::exit;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Run document to start from; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<SystemKind>,
    #[arg(long)]
    pub agents: Option<usize>,
    /// Training trajectories.
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub test_trajectories: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Raw integration steps per trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Keep every n-th raw step.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub edge_prob: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// 200 train / 50 test trajectories instead of 20000 / 5000.
    #[arg(long)]
    pub desk_scale: bool,
    /// Dataset path; defaults to `dataset.jsonl` in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Metadata written next to the dataset.
#[derive(Debug, Serialize)]
pub struct SimulateMeta {
    pub n_records: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub system: SystemKind,
    pub scheme: Scheme,
    pub seed: u64,
    /// Per-record random streams derived from `seed`.
    pub streams: Vec<u64>,
    pub scale: f64,
}

pub fn resolve(args: &SimulateArgs) -> anyhow::Result<SimulateRun> {
    let mut run = match &args.config {
        Some(path) => {
            let run: SimulateRun = config::load(path)?;
            config::check_seed("dataset.seed", run.seed, run.dataset.seed)?;
            run
        }
        None => {
            let kind = args.system.unwrap_or(SystemKind::SimpleSpring);
            let agents = args.agents.unwrap_or(if kind == SystemKind::TriplePendulum { 3 } else { 5 });
            let mut dataset = DatasetConfig::desk_scale(kind, agents);
            if !args.desk_scale {
                dataset.n_train = 20_000;
                dataset.n_test = 5_000;
            }
            SimulateRun {
                schema_version: RUN_SCHEMA_VERSION,
                seed: 0,
                dataset,
            }
        }
    };
    let d = &mut run.dataset;
    if args.config.is_some() && (args.system.is_some() || args.agents.is_some()) {
        return Err(exit::config("--system and --agents cannot override a --config file"));
    }
    if let Some(n) = args.trajectories {
        d.n_train = n;
        if args.test_trajectories.is_none() && !args.desk_scale && args.config.is_none() {
            d.n_test = 0;
        }
    }
    if let Some(n) = args.test_trajectories {
        d.n_test = n;
    }
    if args.trajectories == Some(0) {
        return Err(exit::config("--trajectories must be positive"));
    }
    if let Some(v) = args.dt {
        d.dt = v;
    }
    if let Some(v) = args.steps {
        d.raw_steps = v;
    }
    if let Some(v) = args.subsample {
        d.subsample = v;
    }
    if let Some(v) = args.scheme {
        d.scheme = v;
    }
    if let Some(v) = args.noise {
        d.noise = v;
    }
    if let Some(v) = args.edge_prob {
        d.edge_prob = Some(v);
    }
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    run.dataset.seed = run.seed;
    run.dataset.validate()?;
    Ok(run)
}

pub fn run(run: &SimulateRun, out: &Path) -> anyhow::Result<SimulateMeta> {
    let dataset = generate_dataset(&run.dataset)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_dataset(out, &dataset).with_context(|| format!("writing {}", out.display()))?;
    crate::write_json(&crate::sidecar(out, "config.json"), run)?;
    let meta = SimulateMeta {
        n_records: dataset.records.len(),
        n_train: run.dataset.n_train,
        n_test: run.dataset.n_test,
        system: run.dataset.system.kind,
        scheme: run.dataset.scheme,
        seed: run.seed,
        streams: dataset.records.iter().map(|r| r.stream).collect(),
        scale: dataset.header.scale,
    };
    crate::write_json(&crate::sidecar(out, "meta.json"), &meta)?;
    Ok(meta)
}
