use serde::{Deserialize, Serialize};

use super::layers::{
    batchnorm_backward, batchnorm_forward, dense_backward, dense_forward, relu_backward, relu_forward,
    sigmoid_backward, sigmoid_forward, softmax_backward, softmax_forward, BatchNormCache, BatchNormMode, LayerSpec,
    RunningStats,
};
use super::params::ParamStore;
use super::tensor::Tensor2;
use crate::{Error, Result};

/// A chain of layers whose parameters live in a shared [`ParamStore`],
/// starting at layer slot `first_slot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<LayerSpec>,
    pub first_slot: usize,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Tensor2>,
    outputs: Vec<Option<Tensor2>>,
    bn: Vec<Option<BatchNormCache>>,
}

impl Sequential {
    pub fn new(layers: Vec<LayerSpec>, first_slot: usize) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {:?} feeds {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self { layers, first_slot })
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, LayerSpec::input_width)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::output_width)
    }

    pub fn batchnorm_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Batchnorm { .. }))
            .count()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn running_stats(&self) -> Vec<RunningStats> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Batchnorm { width, .. } => Some(RunningStats::new(*width)),
                _ => None,
            })
            .collect()
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: Tensor2,
        mode: BatchNormMode,
        running: &mut [RunningStats],
    ) -> Result<(Tensor2, Trace)> {
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
            bn: Vec::with_capacity(self.layers.len()),
        };
        let mut bn_idx = 0;
        let mut cur = x;
        for (i, spec) in self.layers.iter().enumerate() {
            let p = store.layer(self.first_slot + i);
            let (next, keep_out, cache) = match *spec {
                LayerSpec::Dense { fan_in, fan_out } => {
                    let (w, b) = p.split_at(fan_in * fan_out);
                    (dense_forward(&cur, w, b)?, false, None)
                }
                LayerSpec::Batchnorm { width, eps, momentum } => {
                    let (g, b) = p.split_at(width);
                    let rs = running
                        .get_mut(bn_idx)
                        .ok_or_else(|| Error::InvalidArgument("missing running stats".into()))?;
                    bn_idx += 1;
                    let (y, c) = batchnorm_forward(&cur, g, b, eps, momentum, mode, rs)?;
                    (y, false, Some(c))
                }
                LayerSpec::Relu { .. } => (relu_forward(&cur), false, None),
                LayerSpec::Sigmoid { .. } => (sigmoid_forward(&cur), true, None),
                LayerSpec::Softmax { .. } => (softmax_forward(&cur), true, None),
            };
            trace.outputs.push(keep_out.then(|| next.clone()));
            trace.bn.push(cache);
            trace.inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok((cur, trace))
    }

    /// Accumulates parameter gradients into `grads` (indexed like
    /// `store.params`) and returns the gradient with respect to the input.
    pub fn backward(&self, store: &ParamStore, trace: &Trace, dout: Tensor2, grads: &mut [f64]) -> Result<Tensor2> {
        let mut g = dout;
        for (i, spec) in self.layers.iter().enumerate().rev() {
            let slot = self.first_slot + i;
            let p = store.layer(slot);
            let (start, _) = store.bounds(slot);
            let x = &trace.inputs[i];
            g = match *spec {
                LayerSpec::Dense { fan_in, fan_out } => {
                    let w = &p[..fan_in * fan_out];
                    let d = dense_backward(x, w, &g)?;
                    let dst = &mut grads[start..start + fan_in * fan_out + fan_out];
                    for (acc, v) in dst.iter_mut().zip(d.dw.iter().chain(&d.db)) {
                        *acc += v;
                    }
                    d.dx
                }
                LayerSpec::Batchnorm { width, .. } => {
                    let cache = trace.bn[i].as_ref().expect("batchnorm cache");
                    let (dx, dg, db) = batchnorm_backward(cache, &p[..width], &g)?;
                    let dst = &mut grads[start..start + 2 * width];
                    for (acc, v) in dst.iter_mut().zip(dg.iter().chain(&db)) {
                        *acc += v;
                    }
                    dx
                }
                LayerSpec::Relu { .. } => relu_backward(x, &g),
                LayerSpec::Sigmoid { .. } => sigmoid_backward(trace.outputs[i].as_ref().expect("output"), &g),
                LayerSpec::Softmax { .. } => softmax_backward(trace.outputs[i].as_ref().expect("output"), &g),
            };
        }
        Ok(g)
    }
}

/// Dense/ReLU stack: `depth` dense layers, ReLU between them, linear output.
pub fn relu_mlp(input: usize, hidden: usize, output: usize, depth: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut width = input;
    for _ in 0..depth.saturating_sub(1) {
        layers.push(LayerSpec::dense(width, hidden));
        layers.push(LayerSpec::Relu { width: hidden });
        width = hidden;
    }
    layers.push(LayerSpec::dense(width, output));
    layers
}

/// Like [`relu_mlp`] but hidden dense layers after the first are followed
/// by batchnorm. The first is left plain: inputs that are constant over the
/// batch only shift its pre-activations, and normalizing there would cancel
/// them exactly.
pub fn batchnorm_relu_mlp(input: usize, hidden: usize, output: usize, depth: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut width = input;
    for i in 0..depth.saturating_sub(1) {
        layers.push(LayerSpec::dense(width, hidden));
        if i > 0 {
            layers.push(LayerSpec::batchnorm(hidden));
        }
        layers.push(LayerSpec::Relu { width: hidden });
        width = hidden;
    }
    layers.push(LayerSpec::dense(width, output));
    layers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::params::init_params;

    #[test]
    fn stack_shapes() {
        let layers = batchnorm_relu_mlp(10, 8, 3, 4);
        assert_eq!(
            layers.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count(),
            4
        );
        let net = Sequential::new(layers.clone(), 0).unwrap();
        assert_eq!(net.batchnorm_count(), 2);
        assert!(matches!(layers[1], LayerSpec::Relu { .. }));
        let store = init_params(&layers, 1).unwrap();
        let mut rs = net.running_stats();
        let (y, _) = net
            .forward(&store, Tensor2::filled(5, 10, 0.3), BatchNormMode::Memorize, &mut rs)
            .unwrap();
        assert_eq!(y.shape(), (5, 3));
        assert!(Sequential::new(vec![LayerSpec::dense(3, 4), LayerSpec::dense(5, 1)], 0).is_err());
    }
}
