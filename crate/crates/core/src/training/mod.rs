//! Objectives, optimizer, training loop, and evaluation metrics.

pub mod loss;
mod optim;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use treat_autodiff::{AutodiffError, Tape, Tensor, Var};

pub use optim::AdamW;

use crate::data::{DataError, Dataset, Sample, Split};
use crate::model::{Batch, Bound, Direction, Model, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gradient of parameter {param} is not finite")]
    NonFiniteGradient { param: usize },
    #[error("training diverged in epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
    #[error("every evaluated trajectory diverged ({0} skipped)")]
    AllDiverged(usize),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

/// Which reversal penalty joins the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Forward prediction against the reverse rollout from the final state.
    #[default]
    Treat,
    /// Ground truth against the reverse rollout from the final state.
    GtRev,
    /// Forward prediction against a rollout of `-g` from the initial state.
    Rev2,
    /// Reconstruction only; the reversal loss is logged, not optimized.
    None,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [LossVariant::Treat, LossVariant::GtRev, LossVariant::Rev2, LossVariant::None];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Treat => "treat",
            LossVariant::GtRev => "gt_rev",
            LossVariant::Rev2 => "rev2",
            LossVariant::None => "none",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown loss variant `{s}` (expected treat, gt_rev, rev2 or none)"))
    }
}

fn default_lr() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    50
}
fn default_patience() -> Option<usize> {
    Some(10)
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_predict_len() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Weight of the reversal loss.
    pub alpha: f64,
    #[serde(default)]
    pub loss_variant: LossVariant,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Stop after this many epochs without a better validation MSE.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    /// Share of training trajectories held out for early stopping.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Prediction points per training sample.
    #[serde(default = "default_predict_len")]
    pub predict_len: usize,
    #[serde(default)]
    pub seed: u64,
    /// Splits each batch across the rayon pool. Results then depend on the
    /// thread count through floating-point summation order.
    #[serde(default)]
    pub parallel: bool,
    /// Zero `input_dim` / `output_dim` are taken from the dataset.
    pub model: ModelConfig,
}

impl TrainingConfig {
    pub fn new(alpha: f64, loss_variant: LossVariant) -> Self {
        Self {
            alpha,
            loss_variant,
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            patience: default_patience(),
            val_fraction: default_val_fraction(),
            predict_len: default_predict_len(),
            seed: 0,
            parallel: false,
            model: ModelConfig::new(0, 0),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if self.loss_variant == LossVariant::None && self.alpha != 0.0 {
            return bad(format!("loss variant none needs alpha = 0, got {}", self.alpha));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.predict_len < 2 {
            return bad("batch_size and epochs must be positive and predict_len at least 2".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    /// The model configuration with dimensions filled in from the data.
    pub fn resolved_model(&self, feat_dim: usize) -> ModelConfig {
        let mut m = self.model.clone();
        if m.input_dim == 0 {
            m.input_dim = feat_dim;
        }
        if m.output_dim == 0 {
            m.output_dim = feat_dim;
        }
        m
    }
}

/// Losses of one batch; the floats are per-sample means.
pub struct BatchLoss {
    pub objective: Var,
    pub l_pred: f64,
    pub l_reverse: f64,
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

/// Builds `(L_pred + α L_rev) / batch` on `tape`. For
/// [`LossVariant::None`] the reversal loss is evaluated on a detached copy
/// of the final latent state, so it is reported but contributes no
/// gradient.
pub fn batch_objective(
    model: &Model,
    tape: &mut Tape,
    p: &Bound,
    batch: &Batch,
    variant: LossVariant,
    alpha: f64,
) -> Result<BatchLoss, ModelError> {
    let k = batch.n_steps;
    let z0 = model.encode(tape, p, batch)?;
    let fwd = model.rollout(tape, p, batch, z0, k, batch.dt, Direction::Forward)?;
    let y_fwd = model.decode_all(tape, p, &fwd)?;
    let truth: Vec<Var> = batch.targets.iter().map(|t| tape.constant(t.clone())).collect();
    let l_pred = loss::reconstruction_on(tape, &y_fwd, &truth)?;
    let z_end = *fwd.latents.last().expect("rollout keeps z0");

    let l_rev = match variant {
        LossVariant::Treat | LossVariant::GtRev => {
            let rev = model.rollout(tape, p, batch, z_end, k, batch.dt, Direction::Reverse)?;
            let y_rev = model.decode_all(tape, p, &rev)?;
            let anchor = if variant == LossVariant::Treat { &y_fwd } else { &truth };
            loss::reversal_on(tape, anchor, &y_rev)?
        }
        LossVariant::Rev2 => {
            let back = model.rollout(tape, p, batch, z0, k, batch.dt, Direction::Reverse)?;
            let y_back = model.decode_all(tape, p, &back)?;
            loss::reconstruction_on(tape, &y_fwd, &y_back)?
        }
        LossVariant::None => {
            let z_end = tape.detach(z_end);
            let frozen: Vec<Var> = y_fwd.iter().map(|&y| tape.detach(y)).collect();
            let rev = model.rollout(tape, p, batch, z_end, k, batch.dt, Direction::Reverse)?;
            let y_rev = model.decode_all(tape, p, &rev)?;
            loss::reversal_on(tape, &frozen, &y_rev)?
        }
    };
    let inv_b = 1.0 / batch.n_samples as f64;
    let objective = match variant {
        LossVariant::None => tape.scale(l_pred, inv_b)?,
        _ => {
            let weighted = tape.scale(l_rev, alpha)?;
            let sum = tape.add(l_pred, weighted)?;
            tape.scale(sum, inv_b)?
        }
    };
    Ok(BatchLoss {
        objective,
        l_pred: scalar(tape, l_pred) * inv_b,
        l_reverse: scalar(tape, l_rev) * inv_b,
    })
}

/// Objective and parameter gradients for one batch. Gradients are zero for
/// parameters the loss does not reach.
pub fn batch_gradients(
    model: &Model,
    samples: &[&Sample],
    variant: LossVariant,
    alpha: f64,
) -> Result<(f64, f64, f64, Vec<Tensor>), ModelError> {
    let batch = Batch::new(samples, &model.config)?;
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, true);
    let bl = batch_objective(model, &mut tape, &p, &batch, variant, alpha)?;
    let total = scalar(&tape, bl.objective);
    let grads = tape.backward(bl.objective)?;
    let g = p
        .vars
        .iter()
        .zip(&model.params.tensors)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();
    Ok((total, bl.l_pred, bl.l_reverse, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_pred: f64,
    pub l_reverse: f64,
    pub total: f64,
    pub val_mse: f64,
}

/// Per-epoch training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_variant: LossVariant,
    pub alpha: f64,
    pub lr: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl LossReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_pred,l_reverse,total,val_mse\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.l_pred, e.l_reverse, e.total, e.val_mse));
        }
        out
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub report: LossReport,
}

/// Trains on the dataset's training split.
pub fn train(dataset: &Dataset, cfg: &TrainingConfig) -> Result<TrainOutcome, TrainError> {
    let samples = dataset.samples(Split::Train, cfg.predict_len)?;
    train_on_samples(&samples, cfg)
}

pub fn train_on_samples(samples: &[Sample], cfg: &TrainingConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| TrainError::Config("no training trajectories".into()))?;
    let model_cfg = cfg.resolved_model(first.feat_dim);
    let mut model = Model::new(model_cfg, cfg.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64) * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(samples.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut train_idx = train_idx.to_vec();

    let mut opt = AdamW::new(&model.params.tensors, cfg.lr, cfg.weight_decay);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let (mut sum_pred, mut sum_rev, mut sum_total, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (total, l_pred, l_rev, grads) = if cfg.parallel {
                parallel_gradients(&model, &batch, cfg)
            } else {
                batch_gradients(&model, &batch, cfg.loss_variant, cfg.alpha)
            }
            .map_err(|e| TrainError::Diverged {
                epoch,
                message: e.to_string(),
            })?;
            opt.step(&mut model.params.tensors, &grads).map_err(|e| TrainError::Diverged {
                epoch,
                message: e.to_string(),
            })?;
            let b = batch.len() as f64;
            sum_pred += l_pred * b;
            sum_rev += l_rev * b;
            sum_total += total * b;
            seen += batch.len();
        }
        let n = seen as f64;
        let val_mse = if val.is_empty() {
            sum_pred / n
        } else {
            validation_mse(&model, &val)
        };
        history.push(EpochRecord {
            epoch,
            l_pred: sum_pred / n,
            l_reverse: sum_rev / n,
            total: sum_total / n,
            val_mse,
        });
        if val_mse < best.0 {
            best = (val_mse, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                stopped_early = true;
                break;
            }
        }
    }
    if !best.0.is_finite() {
        return Err(TrainError::Diverged {
            epoch: history.len().saturating_sub(1),
            message: "validation error never became finite".into(),
        });
    }
    model.params = best.2;
    Ok(TrainOutcome {
        model,
        report: LossReport {
            loss_variant: cfg.loss_variant,
            alpha: cfg.alpha,
            lr: cfg.lr,
            epochs: history,
            best_epoch: best.1,
            stopped_early,
        },
    })
}

fn parallel_gradients(
    model: &Model,
    batch: &[&Sample],
    cfg: &TrainingConfig,
) -> Result<(f64, f64, f64, Vec<Tensor>), ModelError> {
    let parts = rayon::current_num_threads().clamp(1, batch.len());
    let size = batch.len().div_ceil(parts);
    let results: Vec<_> = batch
        .par_chunks(size)
        .map(|c| batch_gradients(model, c, cfg.loss_variant, cfg.alpha).map(|r| (c.len(), r)))
        .collect::<Result<_, _>>()?;
    let b = batch.len() as f64;
    let mut grads: Vec<Tensor> = model.params.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
    let (mut total, mut l_pred, mut l_rev) = (0.0, 0.0, 0.0);
    for (n, (t, lp, lr, g)) in results {
        let w = n as f64 / b;
        total += t * w;
        l_pred += lp * w;
        l_rev += lr * w;
        for (acc, gi) in grads.iter_mut().zip(g) {
            for (a, v) in acc.data_mut().iter_mut().zip(gi.data()) {
                *a += w * v;
            }
        }
    }
    Ok((total, l_pred, l_rev, grads))
}

/// Mean squared error per feature over the prediction window, forward
/// rollout only. Divergence yields infinity.
fn validation_mse(model: &Model, samples: &[&Sample]) -> f64 {
    let run = || -> Result<f64, ModelError> {
        let batch = Batch::new(samples, &model.config)?;
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, false);
        let z0 = model.encode(&mut tape, &p, &batch)?;
        let fwd = model.rollout(&mut tape, &p, &batch, z0, batch.n_steps, batch.dt, Direction::Forward)?;
        let y = model.decode_all(&mut tape, &p, &fwd)?;
        let sq: f64 = y
            .iter()
            .zip(&batch.targets)
            .map(|(&v, t)| {
                tape.value(v)
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        Ok(sq / (batch.n_times() * batch.n_agents * batch.feat_dim) as f64)
    };
    run().unwrap_or(f64::INFINITY)
}

/// Cumulative MSE over the first `len` predicted points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMse {
    pub len: usize,
    pub mse: f64,
    /// `mse` in units of 1e-2.
    pub mse_e2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_trajectories: usize,
    /// Trajectories whose rollout diverged; excluded from every metric.
    pub skipped: usize,
    /// Prediction points used for `mse` and the reversal metrics.
    pub horizon: usize,
    /// Mean over trajectories of the per-feature squared error on
    /// normalized features.
    pub mse: f64,
    pub mse_e2: f64,
    pub per_trajectory_mse: Vec<f64>,
    pub buckets: Vec<BucketMse>,
    /// Mean over trajectories and agents of `max_k ||y(t_k) - ŷ_rev||₂`.
    pub max_error_gt_rev: f64,
    /// Mean per-trajectory reversal loss between forward and reverse
    /// predictions.
    pub l_reverse: f64,
    pub l_pred: f64,
}

struct SampleEval {
    /// Squared error summed over agents and features, per time point.
    sq_err: Vec<f64>,
    l_reverse: f64,
    l_pred: f64,
    max_err: Vec<f64>,
}

fn evaluate_one(model: &Model, sample: &Sample, horizon: usize, len: usize) -> Result<SampleEval, ModelError> {
    let s = sample.truncated(len);
    let batch = Batch::new(&[&s], &model.config)?;
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let z0 = model.encode(&mut tape, &p, &batch)?;
    let fwd = model.rollout(&mut tape, &p, &batch, z0, batch.n_steps, batch.dt, Direction::Forward)?;
    let y_fwd: Vec<Tensor> = model
        .decode_all(&mut tape, &p, &fwd)?
        .into_iter()
        .map(|v| tape.value(v).clone())
        .collect();
    let k = horizon - 1;
    let rev = model.rollout(&mut tape, &p, &batch, fwd.latents[k], k, batch.dt, Direction::Reverse)?;
    let y_rev: Vec<Tensor> = model
        .decode_all(&mut tape, &p, &rev)?
        .into_iter()
        .map(|v| tape.value(v).clone())
        .collect();
    let truth = &batch.targets;
    let sq_err = y_fwd
        .iter()
        .zip(truth)
        .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect();
    let l_reverse = loss::reversal(&y_fwd[..horizon], &y_rev).map_err(|e| ModelError::Batch(e.to_string()))?;
    let l_pred = loss::reconstruction(&y_fwd[..horizon], &truth[..horizon]).map_err(|e| ModelError::Batch(e.to_string()))?;
    let f = batch.feat_dim;
    let max_err = (0..batch.n_agents)
        .map(|a| {
            (0..horizon)
                .map(|i| {
                    let yt = &truth[i].data()[a * f..(a + 1) * f];
                    let yr = &y_rev[k - i].data()[a * f..(a + 1) * f];
                    yt.iter().zip(yr).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(SampleEval {
        sq_err,
        l_reverse,
        l_pred,
        max_err,
    })
}

/// Scores `samples`, each holding at least `max(horizon, buckets)`
/// prediction points. Reversal metrics use the first `horizon` points.
pub fn evaluate(model: &Model, samples: &[Sample], horizon: usize, buckets: &[usize]) -> Result<EvalReport, TrainError> {
    let len = buckets.iter().copied().chain([horizon]).max().unwrap_or(horizon);
    if horizon < 2 {
        return Err(TrainError::Config("evaluation horizon must be at least 2".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.times.len() < len {
            return Err(TrainError::Config(format!(
                "test sample {i} has {} prediction points, evaluation needs {len}",
                s.times.len()
            )));
        }
    }
    let results: Vec<Result<SampleEval, ModelError>> =
        samples.par_iter().map(|s| evaluate_one(model, s, horizon, len)).collect();
    let mut evals = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r {
            Ok(e) => evals.push(e),
            Err(ModelError::Diverged { .. }) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if evals.is_empty() {
        return Err(TrainError::AllDiverged(skipped));
    }
    let width = (samples[0].n_agents * samples[0].feat_dim) as f64;
    let prefix_mse = |e: &SampleEval, n: usize| e.sq_err[..n].iter().sum::<f64>() / (n as f64 * width);
    let n = evals.len() as f64;
    let per_trajectory_mse: Vec<f64> = evals.iter().map(|e| prefix_mse(e, horizon)).collect();
    let mse = per_trajectory_mse.iter().sum::<f64>() / n;
    let buckets = buckets
        .iter()
        .map(|&b| {
            let m = evals.iter().map(|e| prefix_mse(e, b)).sum::<f64>() / n;
            BucketMse {
                len: b,
                mse: m,
                mse_e2: m * 100.0,
            }
        })
        .collect();
    let n_agent_rows: usize = evals.iter().map(|e| e.max_err.len()).sum();
    let max_error_gt_rev = evals.iter().flat_map(|e| e.max_err.iter()).sum::<f64>() / n_agent_rows as f64;
    Ok(EvalReport {
        n_trajectories: samples.len(),
        skipped,
        horizon,
        mse,
        mse_e2: mse * 100.0,
        per_trajectory_mse,
        buckets,
        max_error_gt_rev,
        l_reverse: evals.iter().map(|e| e.l_reverse).sum::<f64>() / n,
        l_pred: evals.iter().map(|e| e.l_pred).sum::<f64>() / n,
    })
}
