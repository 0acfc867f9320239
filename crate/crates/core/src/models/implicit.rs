//! Implicit per-pixel model.
//!
//! A representation MLP turns the encoded bitmap size (and optionally a
//! second one the encoded weight) into a latent vector. The intensity MLP
//! takes `[latent, x, γ(x), y, γ(y)]` for every pixel of the bitmap as one
//! batch and predicts a distribution over the intensity categories.
//! Batchnorm is used only inside the intensity MLP, where the batch axis is
//! the bitmap's pixels.

use serde::{Deserialize, Serialize};

use super::quantizer::CATEGORIES;
use crate::encoding::{normalize_coord, normalize_size, FrequencyEncoder};
use crate::tensornet::layers::softmax_in_place;
use crate::tensornet::network::{batchnorm_relu_mlp, relu_mlp, Trace};
use crate::tensornet::{focal_loss_batch, BatchNormMode, LayerSpec, ParamStore, RunningStats, Sequential, Tensor2};
use crate::{Error, Result, SIZE_MAX, SIZE_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitConfig {
    pub size_min: usize,
    pub size_max: usize,
    pub hidden_width: usize,
    pub latent_width: usize,
    /// Dense layers per representation MLP.
    pub representation_depth: usize,
    /// Dense layers in the intensity MLP.
    pub intensity_depth: usize,
    pub categories: usize,
    pub encoder: FrequencyEncoder,
    /// When off, every scalar is fed raw without `γ`.
    pub frequency_encoding: bool,
    /// Adds the weight representation MLP.
    pub use_weight: bool,
}

impl Default for ImplicitConfig {
    fn default() -> Self {
        Self {
            size_min: SIZE_MIN,
            size_max: SIZE_MAX,
            hidden_width: 256,
            latent_width: 256,
            representation_depth: 5,
            intensity_depth: 11,
            categories: CATEGORIES,
            encoder: FrequencyEncoder::default(),
            frequency_encoding: true,
            use_weight: false,
        }
    }
}

impl ImplicitConfig {
    /// The large preset (about 5.4M parameters without the weight path).
    pub fn full_scale() -> Self {
        Self {
            hidden_width: 640,
            ..Self::default()
        }
    }

    fn feature_width(&self) -> usize {
        self.encoder.feature_width(self.frequency_encoding)
    }

    pub fn latent_total(&self) -> usize {
        if self.use_weight {
            2 * self.latent_width
        } else {
            self.latent_width
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitModel {
    config: ImplicitConfig,
    size_net: Sequential,
    weight_net: Option<Sequential>,
    intensity_net: Sequential,
}

/// Intermediates of one full-bitmap forward pass.
#[derive(Debug, Clone)]
pub struct ImplicitTrace {
    size_trace: Trace,
    weight_trace: Option<Trace>,
    intensity_trace: Trace,
}

impl ImplicitModel {
    pub fn new(config: ImplicitConfig) -> Result<Self> {
        if config.categories != CATEGORIES {
            return Err(Error::InvalidArgument(format!(
                "implicit model uses {CATEGORIES} categories"
            )));
        }
        if config.representation_depth == 0 || config.intensity_depth < 2 {
            return Err(Error::InvalidArgument(
                "representation depth ≥ 1 and intensity depth ≥ 2 required".into(),
            ));
        }
        if config.hidden_width == 0 || config.latent_width == 0 {
            return Err(Error::InvalidArgument("widths must be positive".into()));
        }
        if config.size_min == 0 || config.size_min > config.size_max {
            return Err(Error::InvalidArgument("empty size range".into()));
        }
        let f = config.feature_width();
        let h = config.hidden_width;
        let rep = relu_mlp(f, h, config.latent_width, config.representation_depth);
        let mut slot = 0;
        let size_net = Sequential::new(rep.clone(), slot)?;
        slot += rep.len();
        let weight_net = if config.use_weight {
            let net = Sequential::new(rep.clone(), slot)?;
            slot += rep.len();
            Some(net)
        } else {
            None
        };
        let intensity = batchnorm_relu_mlp(
            config.latent_total() + 2 * f,
            h,
            config.categories,
            config.intensity_depth,
        );
        let intensity_net = Sequential::new(intensity, slot)?;
        Ok(Self {
            config,
            size_net,
            weight_net,
            intensity_net,
        })
    }

    pub fn config(&self) -> &ImplicitConfig {
        &self.config
    }

    /// All layers in parameter-store order.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut v = self.size_net.layers.clone();
        if let Some(w) = &self.weight_net {
            v.extend_from_slice(&w.layers);
        }
        v.extend_from_slice(&self.intensity_net.layers);
        v
    }

    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(LayerSpec::param_count).sum()
    }

    /// Fresh running statistics for the intensity MLP's batchnorm layers.
    pub fn running_stats(&self) -> Vec<RunningStats> {
        self.intensity_net.running_stats()
    }

    pub fn check_size(&self, size: usize) -> Result<()> {
        let c = &self.config;
        if !(c.size_min..=c.size_max).contains(&size) {
            return Err(Error::OutOfRange(format!(
                "size out of trained range {}..{}",
                c.size_min, c.size_max
            )));
        }
        Ok(())
    }

    fn scalar_row(&self, v: f64) -> Tensor2 {
        let mut row = Vec::with_capacity(self.config.feature_width());
        self.config
            .encoder
            .feature_into(v, self.config.frequency_encoding, &mut row);
        let n = row.len();
        Tensor2::from_vec(1, n, row).expect("row width")
    }

    fn weight_input(&self, weight: Option<f64>) -> Result<Option<f64>> {
        match (self.config.use_weight, weight) {
            (true, Some(w)) if (0.0..=1.0).contains(&w) => Ok(Some(w)),
            (true, Some(w)) => Err(Error::OutOfRange(format!("weight {w} outside [0, 1]"))),
            (true, None) => Err(Error::InvalidArgument(
                "model is weight-conditioned; a weight is required".into(),
            )),
            (false, Some(_)) => Err(Error::InvalidArgument("model has no weight input".into())),
            (false, None) => Ok(None),
        }
    }

    fn latent_traced(
        &self,
        store: &ParamStore,
        size: usize,
        weight: Option<f64>,
    ) -> Result<(Vec<f64>, Trace, Option<Trace>)> {
        self.check_size(size)?;
        let weight = self.weight_input(weight)?;
        let (zs, ts) = self.size_net.forward(
            store,
            self.scalar_row(normalize_size(size)),
            BatchNormMode::Memorize,
            &mut [],
        )?;
        let mut latent = zs.into_vec();
        let mut tw = None;
        if let (Some(net), Some(w)) = (&self.weight_net, weight) {
            let (zw, t) = net.forward(store, self.scalar_row(w), BatchNormMode::Memorize, &mut [])?;
            latent.extend_from_slice(zw.data());
            tw = Some(t);
        }
        Ok((latent, ts, tw))
    }

    /// Latent vector for `(size, weight)`; `weight` is the normalised value
    /// and must be given exactly when the model is weight-conditioned.
    pub fn latent(&self, store: &ParamStore, size: usize, weight: Option<f64>) -> Result<Vec<f64>> {
        Ok(self.latent_traced(store, size, weight)?.0)
    }

    /// Positional features `[x, γ(x), y, γ(y)]` for every pixel, rows in
    /// row-major pixel order (`row = y·size + x`).
    pub fn position_features(&self, size: usize) -> Vec<Vec<f64>> {
        let per_coord: Vec<Vec<f64>> = (0..size)
            .map(|c| {
                let mut v = Vec::new();
                self.config
                    .encoder
                    .feature_into(normalize_coord(c, size), self.config.frequency_encoding, &mut v);
                v
            })
            .collect();
        let mut rows = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let mut r = per_coord[x].clone();
                r.extend_from_slice(&per_coord[y]);
                rows.push(r);
            }
        }
        rows
    }

    fn intensity_input(&self, latent: &[f64], size: usize) -> Result<Tensor2> {
        if latent.len() != self.config.latent_total() {
            return Err(Error::DimensionMismatch(format!(
                "latent of width {}, expected {}",
                latent.len(),
                self.config.latent_total()
            )));
        }
        let width = self.intensity_net.input_width();
        let mut data = Vec::with_capacity(size * size * width);
        for pos in self.position_features(size) {
            data.extend_from_slice(latent);
            data.extend_from_slice(&pos);
        }
        Tensor2::from_vec(size * size, width, data)
    }

    /// Category logits for every pixel of a `size×size` bitmap given a latent.
    pub fn logits_from_latent(
        &self,
        store: &ParamStore,
        latent: &[f64],
        size: usize,
        mode: BatchNormMode,
        running: &mut [RunningStats],
    ) -> Result<(Tensor2, Trace)> {
        self.check_size(size)?;
        let x = self.intensity_input(latent, size)?;
        self.intensity_net.forward(store, x, mode, running)
    }

    /// Per-pixel category distributions (`size² × 20`) for a latent.
    pub fn probabilities_from_latent(
        &self,
        store: &ParamStore,
        latent: &[f64],
        size: usize,
        mode: BatchNormMode,
        running: &mut [RunningStats],
    ) -> Result<Tensor2> {
        let (mut logits, _) = self.logits_from_latent(store, latent, size, mode, running)?;
        for r in 0..logits.rows() {
            softmax_in_place(logits.row_mut(r));
        }
        Ok(logits)
    }

    pub fn probabilities(
        &self,
        store: &ParamStore,
        size: usize,
        weight: Option<f64>,
        mode: BatchNormMode,
        running: &mut [RunningStats],
    ) -> Result<Tensor2> {
        let latent = self.latent(store, size, weight)?;
        self.probabilities_from_latent(store, &latent, size, mode, running)
    }

    /// Distribution for a single pixel, computed within the full-bitmap batch
    /// (batch statistics are over all of its pixels).
    #[allow(clippy::too_many_arguments)]
    pub fn pixel_probabilities(
        &self,
        store: &ParamStore,
        latent: &[f64],
        x: usize,
        y: usize,
        size: usize,
        mode: BatchNormMode,
        running: &mut [RunningStats],
    ) -> Result<Vec<f64>> {
        if x >= size || y >= size {
            return Err(Error::OutOfRange(format!(
                "pixel ({x}, {y}) outside a {size}x{size} bitmap"
            )));
        }
        let p = self.probabilities_from_latent(store, latent, size, mode, running)?;
        Ok(p.row(y * size + x).to_vec())
    }

    /// Forward pass for one bitmap that also returns the intermediates needed
    /// by [`ImplicitModel::backward`].
    pub fn forward_traced(
        &self,
        store: &ParamStore,
        size: usize,
        weight: Option<f64>,
        mode: BatchNormMode,
        running: &mut [RunningStats],
    ) -> Result<(Tensor2, ImplicitTrace)> {
        let (latent, size_trace, weight_trace) = self.latent_traced(store, size, weight)?;
        let (mut probs, intensity_trace) = self.logits_from_latent(store, &latent, size, mode, running)?;
        for r in 0..probs.rows() {
            softmax_in_place(probs.row_mut(r));
        }
        Ok((
            probs,
            ImplicitTrace {
                size_trace,
                weight_trace,
                intensity_trace,
            },
        ))
    }

    /// Backpropagates a gradient with respect to the logits.
    pub fn backward(
        &self,
        store: &ParamStore,
        trace: &ImplicitTrace,
        dlogits: Tensor2,
        grads: &mut [f64],
    ) -> Result<()> {
        let dx = self
            .intensity_net
            .backward(store, &trace.intensity_trace, dlogits, grads)?;
        let l = self.config.latent_width;
        let mut dlatent = vec![0.0; self.config.latent_total()];
        for r in 0..dx.rows() {
            for (acc, g) in dlatent.iter_mut().zip(dx.row(r)) {
                *acc += g;
            }
        }
        let ds = Tensor2::from_vec(1, l, dlatent[..l].to_vec())?;
        self.size_net.backward(store, &trace.size_trace, ds, grads)?;
        if let (Some(net), Some(t)) = (&self.weight_net, &trace.weight_trace) {
            let dw = Tensor2::from_vec(1, l, dlatent[l..].to_vec())?;
            net.backward(store, t, dw, grads)?;
        }
        Ok(())
    }

    /// Mean focal loss of one bitmap against per-pixel target categories,
    /// with parameter gradients accumulated into `grads`. Also returns the
    /// probabilities of the forward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        size: usize,
        weight: Option<f64>,
        targets: &[usize],
        gamma: f64,
        mode: BatchNormMode,
        running: &mut [RunningStats],
        grads: &mut [f64],
    ) -> Result<(f64, Tensor2)> {
        let (probs, trace) = self.forward_traced(store, size, weight, mode, running)?;
        let (loss, dlogits) = focal_loss_batch(&probs, targets, gamma)?;
        self.backward(store, &trace, dlogits, grads)?;
        Ok((loss, probs))
    }
}
