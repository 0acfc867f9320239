//! The two model families, intensity quantization, and the trained-model
//! bundle that checkpoints serialize.

pub mod implicit;
pub mod masked;
pub mod quantizer;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use implicit::{ImplicitConfig, ImplicitModel};
pub use masked::{MaskedMlp, MaskedMlpConfig};
pub use quantizer::{decode_category, quantize_intensity, Decoding, CATEGORIES};

use crate::tensornet::{load_checkpoint, save_checkpoint, BatchNormMode, LayerSpec, ParamStore, RunningStats};
use crate::trainer::TrainJob;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Masked(MaskedMlpConfig),
    Implicit(ImplicitConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Masked(MaskedMlp),
    Implicit(ImplicitModel),
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(match config {
            ModelConfig::Masked(c) => Model::Masked(MaskedMlp::new(c.clone())?),
            ModelConfig::Implicit(c) => Model::Implicit(ImplicitModel::new(c.clone())?),
        })
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        match self {
            Model::Masked(m) => m.layer_specs().to_vec(),
            Model::Implicit(m) => m.layer_specs(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Masked(_) => "masked",
            Model::Implicit(_) => "implicit",
        }
    }

    pub fn size_range(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            Model::Masked(m) => m.config().size_min..=m.config().size_max,
            Model::Implicit(m) => m.config().size_min..=m.config().size_max,
        }
    }
}

/// A weight id and its normalised `[0, 1]` conditioning value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub id: String,
    pub value: f64,
}

/// Everything in the checkpoint's config blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model: ModelConfig,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    pub font: String,
    pub glyph: char,
    pub weights: Vec<WeightEntry>,
    pub epochs_completed: u32,
    /// Batchnorm mode used while training; inference uses the matching
    /// inference mode.
    pub batchnorm_training: BatchNormMode,
    #[serde(default)]
    pub running_stats: Vec<RunningStats>,
    pub job: TrainJob,
}

/// A model with its parameters and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphModel {
    pub meta: ModelMeta,
    pub model: Model,
    pub store: ParamStore,
}

/// Per-layer parameter offsets for a layer list.
pub fn layer_offsets(layers: &[LayerSpec]) -> Vec<usize> {
    layers
        .iter()
        .scan(0, |acc, l| {
            let start = *acc;
            *acc += l.param_count();
            Some(start)
        })
        .collect()
}

impl GlyphModel {
    pub fn from_parts(meta: ModelMeta, mut store: ParamStore) -> Result<Self> {
        let model = Model::new(&meta.model)?;
        let layers = model.layer_specs();
        if layers != meta.layers {
            return Err(Error::Checkpoint("layer list does not match model config".into()));
        }
        let expected: usize = layers.iter().map(LayerSpec::param_count).sum();
        if store.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{} parameters stored, model needs {expected}",
                store.len()
            )));
        }
        store.offsets = layer_offsets(&layers);
        Ok(Self { meta, model, store })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta): (ParamStore, ModelMeta) = load_checkpoint(path)?;
        Self::from_parts(meta, store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.store, &self.meta, path)
    }

    pub fn inference_mode(&self) -> BatchNormMode {
        match self.meta.batchnorm_training {
            BatchNormMode::Memorize => BatchNormMode::Memorize,
            _ => BatchNormMode::StandardInfer,
        }
    }

    pub fn size_range(&self) -> std::ops::RangeInclusive<usize> {
        self.model.size_range()
    }

    pub fn check_size(&self, size: usize) -> Result<()> {
        let r = self.size_range();
        if !r.contains(&size) {
            return Err(Error::OutOfRange(format!(
                "size out of trained range {}..{}",
                r.start(),
                r.end()
            )));
        }
        Ok(())
    }

    pub fn is_weight_conditioned(&self) -> bool {
        matches!(&self.model, Model::Implicit(m) if m.config().use_weight)
    }

    /// Resolves a weight id from training, or a literal value in `[0, 1]`.
    pub fn weight_value(&self, weight: &str) -> Result<f64> {
        if let Some(e) = self.meta.weights.iter().find(|e| e.id == weight) {
            return Ok(e.value);
        }
        match weight.parse::<f64>() {
            Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
            _ => Err(Error::InvalidArgument(format!(
                "unknown weight {weight:?}; trained weights: {}",
                self.meta
                    .weights
                    .iter()
                    .map(|e| e.id.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        }
    }

    /// Conditioning value for an optional weight id: `None` for models
    /// without a weight path, the default (first) weight when omitted.
    pub fn conditioning(&self, weight: Option<&str>) -> Result<Option<f64>> {
        if !self.is_weight_conditioned() {
            return Ok(None);
        }
        match weight {
            Some(w) => self.weight_value(w).map(Some),
            None => self
                .meta
                .weights
                .first()
                .map(|e| Some(e.value))
                .ok_or_else(|| Error::InvalidArgument("model has no trained weights".into())),
        }
    }

    /// Pixel distributions computed exactly as the training step computes
    /// them (training batchnorm mode, running statistics left untouched).
    pub fn training_probabilities(&self, size: usize, weight: Option<f64>) -> Result<crate::tensornet::Tensor2> {
        let Model::Implicit(m) = &self.model else {
            return Err(Error::InvalidArgument("not an implicit model".into()));
        };
        let mut rs = self.meta.running_stats.clone();
        Ok(
            m.forward_traced(&self.store, size, weight, self.meta.batchnorm_training, &mut rs)?
                .0,
        )
    }

    /// Pixel distributions as rendering computes them.
    pub fn inference_probabilities(&self, size: usize, weight: Option<f64>) -> Result<crate::tensornet::Tensor2> {
        let Model::Implicit(m) = &self.model else {
            return Err(Error::InvalidArgument("not an implicit model".into()));
        };
        let mut rs = self.meta.running_stats.clone();
        m.probabilities(&self.store, size, weight, self.inference_mode(), &mut rs)
    }
}
