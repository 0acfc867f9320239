use super::tensor::Tensor2;
use crate::sampling::SamplingMask;
use crate::{Error, Result};

/// Default focusing parameter of the focal loss.
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

/// Focal loss `-(1 - p_t)^γ · ln p_t` for one softmax row, returned with its
/// gradient with respect to the logits that produced `probs`.
pub fn focal_loss(probs: &[f64], target: usize, gamma: f64) -> Result<(f64, Vec<f64>)> {
    if target >= probs.len() {
        return Err(Error::InvalidArgument(format!(
            "target category {target} out of range 0..{}",
            probs.len()
        )));
    }
    if gamma < 0.0 {
        return Err(Error::InvalidArgument(format!("focusing parameter {gamma} < 0")));
    }
    let mut grad = vec![0.0; probs.len()];
    let loss = focal_row(probs, target, gamma, 1.0, &mut grad);
    Ok((loss, grad))
}

/// Writes `scale · dL/dlogits` into `grad` and returns the unscaled loss.
fn focal_row(probs: &[f64], target: usize, gamma: f64, scale: f64, grad: &mut [f64]) -> f64 {
    let p = probs[target].max(f64::MIN_POSITIVE);
    let q = 1.0 - p;
    let ln_p = p.ln();
    let focus = q.powf(gamma);
    let loss = -focus * ln_p;
    // p · dL/dp = γ·q^(γ-1)·p·ln p − q^γ, with the q = 0 limit taken as 0.
    let lead = if q > 0.0 && gamma > 0.0 {
        gamma * q.powf(gamma - 1.0) * p * ln_p
    } else {
        0.0
    };
    let dl_dp_times_p = lead - focus;
    for (j, (g, &pj)) in grad.iter_mut().zip(probs).enumerate() {
        let delta = if j == target { 1.0 } else { 0.0 };
        *g = scale * dl_dp_times_p * (delta - pj);
    }
    loss.max(0.0)
}

/// Mean focal loss over the rows of `probs`; the gradient is that of the mean.
pub fn focal_loss_batch(probs: &Tensor2, targets: &[usize], gamma: f64) -> Result<(f64, Tensor2)> {
    if targets.len() != probs.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} rows",
            targets.len(),
            probs.rows()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= probs.cols()) {
        return Err(Error::InvalidArgument(format!(
            "target category {bad} out of range 0..{}",
            probs.cols()
        )));
    }
    let n = probs.rows() as f64;
    let mut grad = Tensor2::zeros(probs.rows(), probs.cols());
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        total += focal_row(probs.row(r), t, gamma, 1.0 / n, grad.row_mut(r));
    }
    Ok((total / n, grad))
}

/// Mean squared error over the mask's selected pixels of a `T×T` prediction.
/// The gradient is exactly zero off the mask.
pub fn masked_l2_loss(pred: &Tensor2, target: &Tensor2, mask: &SamplingMask) -> Result<(f64, Tensor2)> {
    let t = mask.target_size();
    if pred.shape() != (t, t) || target.shape() != (t, t) {
        return Err(Error::DimensionMismatch(format!(
            "masked L2 expects {t}x{t}, got prediction {:?} and target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let ones = mask.ones() as f64;
    let mut grad = Tensor2::zeros(t, t);
    let mut sum = 0.0;
    for &i in mask.row_map() {
        for &j in mask.col_map() {
            let d = pred.get(i, j) - target.get(i, j);
            sum += d * d;
            grad.set(i, j, 2.0 * d / ones);
        }
    }
    Ok((sum / ones, grad))
}
