//! Reconstruction and reversal losses, on plain tensors and on a tape.

use treat_autodiff::{AutodiffError, Tape, Tensor, Var};

use super::TrainError;

fn check_aligned(a: &[Tensor], b: &[Tensor]) -> Result<(), TrainError> {
    if a.len() != b.len() {
        return Err(TrainError::Shape(format!("{} vs {} time points", a.len(), b.len())));
    }
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if x.shape() != y.shape() {
            return Err(TrainError::Shape(format!(
                "time point {k}: shapes {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
    }
    Ok(())
}

fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ_k ||truth_k - pred_k||²` over aligned time points.
pub fn reconstruction(pred: &[Tensor], truth: &[Tensor]) -> Result<f64, TrainError> {
    check_aligned(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| sq_dist(p, t)).sum())
}

/// `Σ_k ||fwd_k - rev_{K-k}||²`: the reverse rollout's index `K - k` lands
/// on the same physical time as forward index `k`.
pub fn reversal(fwd: &[Tensor], rev: &[Tensor]) -> Result<f64, TrainError> {
    check_aligned(fwd, rev)?;
    let k = fwd.len();
    Ok((0..k).map(|i| sq_dist(&fwd[i], &rev[k - 1 - i])).sum())
}

/// Reversal loss measured against ground truth instead of the forward
/// prediction.
pub fn reversal_against_truth(truth: &[Tensor], rev: &[Tensor]) -> Result<f64, TrainError> {
    reversal(truth, rev)
}

/// Loss between a forward rollout and a rollout of `-g` started from the
/// same initial state: index `k` pairs with index `k`.
pub fn reversal_from_initial(fwd: &[Tensor], back: &[Tensor]) -> Result<f64, TrainError> {
    reconstruction(fwd, back)
}

pub fn combined(l_pred: f64, l_rev: f64, alpha: f64) -> f64 {
    l_pred + alpha * l_rev
}

/// Tape version of [`reconstruction`].
pub fn reconstruction_on(tape: &mut Tape, pred: &[Var], truth: &[Var]) -> Result<Var, AutodiffError> {
    paired_sum(tape, pred, truth, |k, _| k)
}

/// Tape version of [`reversal`].
pub fn reversal_on(tape: &mut Tape, fwd: &[Var], rev: &[Var]) -> Result<Var, AutodiffError> {
    paired_sum(tape, fwd, rev, |k, n| n - 1 - k)
}

fn paired_sum(
    tape: &mut Tape,
    a: &[Var],
    b: &[Var],
    pair: impl Fn(usize, usize) -> usize,
) -> Result<Var, AutodiffError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(AutodiffError::Invalid(format!(
            "cannot pair {} with {} time points",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut total: Option<Var> = None;
    for k in 0..n {
        let d = tape.sub(a[k], b[pair(k, n)])?;
        let s = tape.l2_norm_sq(d)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one time point"))
}
