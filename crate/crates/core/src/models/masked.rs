//! Fixed-size output MLP: one-hot size in, `T×T` sigmoid bitmap out.
//!
//! ```text
//! one-hot ─ E0 ─ E1 ─ … ─ E(n-1) ─┐
//!           │    │                D(n-2) ─(+E(n-2))─ … ─ D0 ─(+E0)─ out ─ σ
//!           └────┴── additive skips between mirrored widths ──┘
//! ```
//! Every encoder/decoder dense layer is followed by ReLU; the skip is added
//! after the decoder ReLU.

use serde::{Deserialize, Serialize};

use crate::tensornet::layers::{
    dense_backward, dense_forward, relu_backward, relu_forward, sigmoid_backward, sigmoid_forward,
};
use crate::tensornet::{LayerSpec, ParamStore, Tensor2};
use crate::{Error, Result, SIZE_MAX, SIZE_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedMlpConfig {
    pub size_min: usize,
    pub size_max: usize,
    pub encoder_widths: Vec<usize>,
    /// Side of the flattened output grid, at least `size_max`.
    #[serde(default = "default_side")]
    pub side: usize,
}

fn default_side() -> usize {
    SIZE_MAX
}

impl Default for MaskedMlpConfig {
    fn default() -> Self {
        Self {
            size_min: SIZE_MIN,
            size_max: SIZE_MAX,
            encoder_widths: vec![64, 128, 256, 512],
            side: SIZE_MAX,
        }
    }
}

impl MaskedMlpConfig {
    pub fn one_hot_width(&self) -> usize {
        self.size_max - self.size_min + 1
    }

    pub fn output_side(&self) -> usize {
        self.side
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMlp {
    config: MaskedMlpConfig,
    layers: Vec<LayerSpec>,
}

/// Forward intermediates, one row each.
#[derive(Debug, Clone)]
pub struct MaskedTrace {
    input: Tensor2,
    enc_pre: Vec<Tensor2>,
    enc_act: Vec<Tensor2>,
    dec_in: Vec<Tensor2>,
    dec_pre: Vec<Tensor2>,
    out_in: Tensor2,
    output: Tensor2,
}

impl MaskedMlp {
    pub fn new(config: MaskedMlpConfig) -> Result<Self> {
        if config.encoder_widths.is_empty() || config.encoder_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "encoder widths must be non-empty and positive".into(),
            ));
        }
        if config.size_min == 0 || config.size_min > config.size_max {
            return Err(Error::InvalidArgument("empty size range".into()));
        }
        if config.side < config.size_max {
            return Err(Error::InvalidArgument(format!(
                "output side {} is smaller than the largest size {}",
                config.side, config.size_max
            )));
        }
        let w = &config.encoder_widths;
        let mut layers = Vec::new();
        let mut prev = config.one_hot_width();
        for &width in w {
            layers.push(LayerSpec::dense(prev, width));
            prev = width;
        }
        for j in (0..w.len() - 1).rev() {
            layers.push(LayerSpec::dense(w[j + 1], w[j]));
        }
        let side = config.output_side();
        layers.push(LayerSpec::dense(w[0], side * side));
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MaskedMlpConfig {
        &self.config
    }

    /// Dense layers in parameter-store order: encoder, decoder, output.
    pub fn layer_specs(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn one_hot(&self, size: usize) -> Result<Tensor2> {
        let c = &self.config;
        if !(c.size_min..=c.size_max).contains(&size) {
            return Err(Error::OutOfRange(format!(
                "size out of trained range {}..{}",
                c.size_min, c.size_max
            )));
        }
        let mut x = Tensor2::zeros(1, c.one_hot_width());
        x.set(0, size - c.size_min, 1.0);
        Ok(x)
    }

    fn dense(&self, store: &ParamStore, slot: usize, x: &Tensor2) -> Result<Tensor2> {
        let LayerSpec::Dense { fan_in, fan_out } = self.layers[slot] else {
            unreachable!("masked MLP has only dense layers")
        };
        let p = store.layer(slot);
        dense_forward(x, &p[..fan_in * fan_out], &p[fan_in * fan_out..])
    }

    /// Forward from an explicit input row, which must be a valid one-hot.
    pub fn forward_input(&self, store: &ParamStore, input: Tensor2) -> Result<(Tensor2, MaskedTrace)> {
        let hot = input.data().iter().filter(|&&v| v != 0.0).count();
        if input.shape() != (1, self.config.one_hot_width())
            || hot != 1
            || !input.data().iter().all(|&v| v == 0.0 || v == 1.0)
        {
            return Err(Error::InvalidArgument("malformed one-hot size input".into()));
        }
        let n = self.config.encoder_widths.len();
        let mut enc_pre = Vec::with_capacity(n);
        let mut enc_act: Vec<Tensor2> = Vec::with_capacity(n);
        for i in 0..n {
            let x = if i == 0 { &input } else { &enc_act[i - 1] };
            let z = self.dense(store, i, x)?;
            enc_act.push(relu_forward(&z));
            enc_pre.push(z);
        }
        let mut dec_in = Vec::with_capacity(n - 1);
        let mut dec_pre = Vec::with_capacity(n - 1);
        let mut d = enc_act[n - 1].clone();
        // decoder slot k (0-based) maps width w[n-1-k] to w[n-2-k]
        for k in 0..n - 1 {
            let j = n - 2 - k;
            let z = self.dense(store, n + k, &d)?;
            let mut next = relu_forward(&z);
            for (a, b) in next.data_mut().iter_mut().zip(enc_act[j].data()) {
                *a += b;
            }
            dec_in.push(std::mem::replace(&mut d, next));
            dec_pre.push(z);
        }
        let logits = self.dense(store, 2 * n - 1, &d)?;
        let output = sigmoid_forward(&logits);
        let side = self.config.output_side();
        let bitmap = Tensor2::from_vec(side, side, output.data().to_vec())?;
        Ok((
            bitmap,
            MaskedTrace {
                input,
                enc_pre,
                enc_act,
                dec_in,
                dec_pre,
                out_in: d,
                output,
            },
        ))
    }

    /// Full `T×T` output for a bitmap size.
    pub fn forward(&self, store: &ParamStore, size: usize) -> Result<(Tensor2, MaskedTrace)> {
        self.forward_input(store, self.one_hot(size)?)
    }

    /// Accumulates parameter gradients for `dout` (gradient wrt the `T×T`
    /// sigmoid output) into `grads`.
    pub fn backward(&self, store: &ParamStore, trace: &MaskedTrace, dout: &Tensor2, grads: &mut [f64]) -> Result<()> {
        let n = self.config.encoder_widths.len();
        let flat = Tensor2::from_vec(1, dout.rows() * dout.cols(), dout.data().to_vec())?;
        let dlogits = sigmoid_backward(&trace.output, &flat);

        let mut accumulate = |slot: usize, x: &Tensor2, dy: &Tensor2| -> Result<Tensor2> {
            let LayerSpec::Dense { fan_in, fan_out } = self.layers[slot] else {
                unreachable!()
            };
            let p = store.layer(slot);
            let d = dense_backward(x, &p[..fan_in * fan_out], dy)?;
            let (start, _) = store.bounds(slot);
            for (acc, v) in grads[start..].iter_mut().zip(d.dw.iter().chain(&d.db)) {
                *acc += v;
            }
            Ok(d.dx)
        };

        let mut dd = accumulate(2 * n - 1, &trace.out_in, &dlogits)?;
        let mut skip: Vec<Option<Tensor2>> = vec![None; n];
        for k in (0..n - 1).rev() {
            let j = n - 2 - k;
            skip[j] = Some(dd.clone());
            let dz = relu_backward(&trace.dec_pre[k], &dd);
            dd = accumulate(n + k, &trace.dec_in[k], &dz)?;
        }
        let mut de = dd;
        for i in (0..n).rev() {
            if let Some(s) = skip[i].take() {
                if i != n - 1 {
                    for (a, b) in de.data_mut().iter_mut().zip(s.data()) {
                        *a += b;
                    }
                }
            }
            let dz = relu_backward(&trace.enc_pre[i], &de);
            let x = if i == 0 { &trace.input } else { &trace.enc_act[i - 1] };
            de = accumulate(i, x, &dz)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::init_params;

    fn small() -> (MaskedMlp, ParamStore) {
        let m = MaskedMlp::new(MaskedMlpConfig {
            size_min: 4,
            size_max: 7,
            encoder_widths: vec![3, 5, 6],
            side: 7,
        })
        .unwrap();
        let store = init_params(m.layer_specs(), 11).unwrap();
        (m, store)
    }

    #[test]
    fn default_shapes() {
        let m = MaskedMlp::new(MaskedMlpConfig::default()).unwrap();
        let store = init_params(m.layer_specs(), 0).unwrap();
        let (out, _) = m.forward(&store, 20).unwrap();
        assert_eq!(out.shape(), (63, 63));
        assert_eq!(out.data().len(), 3969);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(m.forward(&store, 64).is_err());
        assert!(m.forward_input(&store, Tensor2::zeros(1, 44)).is_err());
        let mut two = Tensor2::zeros(1, 44);
        two.set(0, 0, 1.0);
        two.set(0, 3, 1.0);
        assert!(m.forward_input(&store, two).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (m, mut store) = small();
        // random-ish upstream gradient so every output matters
        let dout = Tensor2::from_fn(7, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let loss = |s: &ParamStore| -> f64 {
            let (out, _) = m.forward(s, 5).unwrap();
            out.data().iter().zip(dout.data()).map(|(a, b)| a * b).sum()
        };
        let (_, trace) = m.forward(&store, 5).unwrap();
        let mut grads = vec![0.0; store.len()];
        m.backward(&store, &trace, &dout, &mut grads).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in (0..store.len()).step_by(3) {
            let orig = store.params[i];
            store.params[i] = orig + h;
            let up = loss(&store);
            store.params[i] = orig - h;
            let down = loss(&store);
            store.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grads[i]).abs() / (fd.abs() + grads[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }
}
