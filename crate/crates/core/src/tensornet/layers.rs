//! Layer kernels with exact analytic backward passes.
//!
//! Dense weights are stored row-major as `fan_in × fan_out`, so a forward
//! pass is `y = x·W + b` with `x` of shape `batch × fan_in`.

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Layout, Tensor2};
use crate::{Error, Result};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// One node of a layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    Batchnorm {
        width: usize,
        eps: f64,
        /// Running-statistics momentum; only consulted by the standard modes.
        momentum: f64,
    },
    Relu {
        width: usize,
    },
    Sigmoid {
        width: usize,
    },
    Softmax {
        width: usize,
    },
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        LayerSpec::Dense { fan_in, fan_out }
    }

    pub fn batchnorm(width: usize) -> Self {
        LayerSpec::Batchnorm {
            width,
            eps: DEFAULT_BN_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn input_width(&self) -> usize {
        match *self {
            LayerSpec::Dense { fan_in, .. } => fan_in,
            LayerSpec::Batchnorm { width, .. }
            | LayerSpec::Relu { width }
            | LayerSpec::Sigmoid { width }
            | LayerSpec::Softmax { width } => width,
        }
    }

    pub fn output_width(&self) -> usize {
        match *self {
            LayerSpec::Dense { fan_out, .. } => fan_out,
            other => other.input_width(),
        }
    }

    /// Number of learned parameters.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { fan_in, fan_out } => fan_in * fan_out + fan_out,
            LayerSpec::Batchnorm { width, .. } => 2 * width,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width() == 0 || self.output_width() == 0 {
            return Err(Error::InvalidArgument(format!("zero-width layer {self:?}")));
        }
        Ok(())
    }
}

fn check_cols(x: &Tensor2, width: usize, what: &str) -> Result<()> {
    if x.cols() != width {
        return Err(Error::DimensionMismatch(format!(
            "{what}: input has {} columns, layer expects {width}",
            x.cols()
        )));
    }
    Ok(())
}

/// `y = x·W + b`.
pub fn dense_forward(x: &Tensor2, w: &[f64], b: &[f64]) -> Result<Tensor2> {
    let fan_out = b.len();
    if fan_out == 0 || !w.len().is_multiple_of(fan_out) {
        return Err(Error::DimensionMismatch("dense weight/bias lengths".into()));
    }
    let fan_in = w.len() / fan_out;
    check_cols(x, fan_in, "dense")?;
    let mut y = Tensor2::zeros(x.rows(), fan_out);
    for row in 0..x.rows() {
        y.row_mut(row).copy_from_slice(b);
    }
    gemm(
        x.rows(),
        fan_in,
        fan_out,
        x.data(),
        Layout::Normal,
        w,
        Layout::Normal,
        1.0,
        y.data_mut(),
    );
    Ok(y)
}

/// Gradients of a dense layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dx: Tensor2,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn dense_backward(x: &Tensor2, w: &[f64], dy: &Tensor2) -> Result<DenseGrads> {
    let fan_out = dy.cols();
    if fan_out == 0 || !w.len().is_multiple_of(fan_out) || dy.rows() != x.rows() {
        return Err(Error::DimensionMismatch("dense backward shapes".into()));
    }
    let fan_in = w.len() / fan_out;
    check_cols(x, fan_in, "dense backward")?;
    let batch = x.rows();

    let mut dx = Tensor2::zeros(batch, fan_in);
    gemm(
        batch,
        fan_out,
        fan_in,
        dy.data(),
        Layout::Normal,
        w,
        Layout::Transposed,
        0.0,
        dx.data_mut(),
    );
    let mut dw = vec![0.0; fan_in * fan_out];
    gemm(
        fan_in,
        batch,
        fan_out,
        x.data(),
        Layout::Transposed,
        dy.data(),
        Layout::Normal,
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0; fan_out];
    for row in 0..batch {
        for (acc, g) in db.iter_mut().zip(dy.row(row)) {
            *acc += g;
        }
    }
    Ok(DenseGrads { dx, dw, db })
}

/// How a batchnorm layer obtains its normalisation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchNormMode {
    /// Current-batch statistics in training *and* inference; running
    /// statistics are never read or written.
    Memorize,
    /// Current-batch statistics, running statistics updated.
    StandardTrain,
    /// Running statistics only.
    StandardInfer,
}

/// Running mean/variance kept by the standard modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }
}

/// Values retained by [`batchnorm_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: BatchNormMode,
    x_hat: Tensor2,
    inv_std: Vec<f64>,
}

pub fn batchnorm_forward(
    x: &Tensor2,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
    momentum: f64,
    mode: BatchNormMode,
    running: &mut RunningStats,
) -> Result<(Tensor2, BatchNormCache)> {
    let width = gain.len();
    check_cols(x, width, "batchnorm")?;
    if bias.len() != width || running.mean.len() != width || running.var.len() != width {
        return Err(Error::DimensionMismatch("batchnorm parameter widths".into()));
    }
    let batch = x.rows();
    let (mean, var) = match mode {
        BatchNormMode::StandardInfer => (running.mean.clone(), running.var.clone()),
        BatchNormMode::Memorize | BatchNormMode::StandardTrain => {
            if batch < 2 {
                return Err(Error::InvalidArgument(format!(
                    "batchnorm needs a batch of at least 2 rows, got {batch}"
                )));
            }
            let (mean, var) = column_moments(x);
            if mode == BatchNormMode::StandardTrain {
                let unbias = batch as f64 / (batch as f64 - 1.0);
                for c in 0..width {
                    running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mean[c];
                    running.var[c] = (1.0 - momentum) * running.var[c] + momentum * var[c] * unbias;
                }
            }
            (mean, var)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = Tensor2::zeros(batch, width);
    let mut y = Tensor2::zeros(batch, width);
    for r in 0..batch {
        let xr = x.row(r);
        let hr = x_hat.row_mut(r);
        for c in 0..width {
            hr[c] = (xr[c] - mean[c]) * inv_std[c];
        }
        let yr = y.row_mut(r);
        let hr = x_hat.row(r);
        for c in 0..width {
            yr[c] = gain[c] * hr[c] + bias[c];
        }
    }
    Ok((y, BatchNormCache { mode, x_hat, inv_std }))
}

/// Biased per-column mean and variance.
fn column_moments(x: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// Returns `(dx, dgain, dbias)`.
pub fn batchnorm_backward(cache: &BatchNormCache, gain: &[f64], dy: &Tensor2) -> Result<(Tensor2, Vec<f64>, Vec<f64>)> {
    let (batch, width) = cache.x_hat.shape();
    if dy.shape() != (batch, width) || gain.len() != width {
        return Err(Error::DimensionMismatch("batchnorm backward shapes".into()));
    }
    let mut dgain = vec![0.0; width];
    let mut dbias = vec![0.0; width];
    for r in 0..batch {
        let hr = cache.x_hat.row(r);
        for (c, g) in dy.row(r).iter().enumerate() {
            dbias[c] += g;
            dgain[c] += g * hr[c];
        }
    }
    let mut dx = Tensor2::zeros(batch, width);
    match cache.mode {
        BatchNormMode::StandardInfer => {
            for r in 0..batch {
                let out = dx.row_mut(r);
                for (c, g) in dy.row(r).iter().enumerate() {
                    out[c] = g * gain[c] * cache.inv_std[c];
                }
            }
        }
        BatchNormMode::Memorize | BatchNormMode::StandardTrain => {
            // dx = gain·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
            let n = batch as f64;
            for r in 0..batch {
                let hr = cache.x_hat.row(r);
                let dyr = dy.row(r);
                let out = dx.row_mut(r);
                for c in 0..width {
                    out[c] = gain[c] * cache.inv_std[c] / n * (n * dyr[c] - dbias[c] - hr[c] * dgain[c]);
                }
            }
        }
    }
    Ok((dx, dgain, dbias))
}

pub fn relu_forward(x: &Tensor2) -> Tensor2 {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given the layer *input*.
pub fn relu_backward(x: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor2::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Tensor2) -> Tensor2 {
    x.map(sigmoid)
}

/// Gradient through the sigmoid given the layer *output*.
pub fn sigmoid_backward(y: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor2::from_vec(y.rows(), y.cols(), data).expect("same shape")
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
pub fn softmax_forward(x: &Tensor2) -> Tensor2 {
    let mut y = x.clone();
    for r in 0..y.rows() {
        softmax_in_place(y.row_mut(r));
    }
    y
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Gradient through the softmax given its *output*.
pub fn softmax_backward(y: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let gr = dy.row(r);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (out, (s, g)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
            *out = s * (g - dot);
        }
    }
    dx
}
