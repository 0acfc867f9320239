//! Deterministic training loops, one model per glyph.
//!
//! A job fixes everything that influences the result: data selection, model
//! shape, schedule, seed and ablation switches. Two runs of the same job on
//! the same dataset produce bit-identical checkpoints, and a run interrupted
//! at any checkpoint resumes onto the same trajectory.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoding::FrequencyEncoder;
use crate::models::{
    layer_offsets, quantize_intensity, GlyphModel, ImplicitConfig, MaskedMlpConfig, Model, ModelConfig, ModelMeta,
    WeightEntry,
};
use crate::sampling::{build_mask, upsample, SamplingMask};
use crate::tensornet::{
    init_params, masked_l2_loss, seeded_rng, AdamConfig, BatchNormMode, LrSchedule, StepOutcome, Tensor2,
    DEFAULT_FOCAL_GAMMA,
};
use crate::{Error, Result, SIZE_MAX, SIZE_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Masked,
    Implicit,
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(Approach::Masked),
            "implicit" => Ok(Approach::Implicit),
            other => Err(Error::InvalidArgument(format!("unknown approach {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Feed raw scalars only, without `γ`.
    pub no_freq_encoding: bool,
    /// Conventional batchnorm (running statistics at inference) and a
    /// shuffled bitmap order every epoch.
    pub no_memorization_adaptations: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImplicitOptions {
    pub hidden_width: usize,
    pub latent_width: usize,
    pub representation_depth: usize,
    pub intensity_depth: usize,
    pub frequency_pairs: usize,
    pub power_lo: f64,
    pub power_hi: f64,
    /// Draw the powers from the seeded generator instead of a uniform grid.
    pub random_powers: bool,
    pub focal_gamma: f64,
}

impl Default for ImplicitOptions {
    fn default() -> Self {
        let d = ImplicitConfig::default();
        Self {
            hidden_width: d.hidden_width,
            latent_width: d.latent_width,
            representation_depth: d.representation_depth,
            intensity_depth: d.intensity_depth,
            frequency_pairs: crate::encoding::DEFAULT_PAIRS,
            power_lo: crate::encoding::DEFAULT_POWER_LO,
            power_hi: crate::encoding::DEFAULT_POWER_HI,
            random_powers: false,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskedOptions {
    pub encoder_widths: Vec<usize>,
}

impl Default for MaskedOptions {
    fn default() -> Self {
        Self {
            encoder_widths: MaskedMlpConfig::default().encoder_widths,
        }
    }
}

fn default_sizes() -> (usize, usize) {
    (SIZE_MIN, SIZE_MAX)
}

fn default_cadence() -> u32 {
    100
}

/// A training job, usually stored as a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub approach: Approach,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub font: String,
    pub weights: Vec<String>,
    pub glyph: char,
    #[serde(default = "default_sizes")]
    pub sizes: (usize, usize),
    /// Defaults to 1600 (masked) or 500 (implicit) when omitted.
    #[serde(default)]
    pub epochs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<LrSchedule>,
    pub seed: u64,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_cadence")]
    pub checkpoint_every: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub implicit: ImplicitOptions,
    #[serde(default)]
    pub masked: MaskedOptions,
}

impl TrainJob {
    /// A job with defaults for everything but the selection and seed.
    pub fn new(approach: Approach, font: &str, weights: &[&str], glyph: char, seed: u64) -> Self {
        Self {
            approach,
            dataset: None,
            font: font.to_string(),
            weights: weights.iter().map(|w| w.to_string()).collect(),
            glyph,
            sizes: default_sizes(),
            epochs: None,
            schedule: None,
            seed,
            ablation: Ablation::default(),
            checkpoint_every: default_cadence(),
            output: None,
            implicit: ImplicitOptions::default(),
            masked: MaskedOptions::default(),
        }
    }

    pub fn epochs(&self) -> u32 {
        self.epochs.unwrap_or(match self.approach {
            Approach::Masked => 1600,
            Approach::Implicit => 500,
        })
    }

    pub fn schedule(&self) -> LrSchedule {
        self.schedule.clone().unwrap_or_else(|| match self.approach {
            Approach::Masked => LrSchedule::masked_default(),
            Approach::Implicit => LrSchedule::implicit_default(),
        })
    }

    pub fn size_range(&self) -> std::ops::RangeInclusive<usize> {
        self.sizes.0..=self.sizes.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::InvalidArgument("job selects no weights".into()));
        }
        if self.epochs() == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        let (lo, hi) = self.sizes;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidArgument(format!("empty size range {lo}..{hi}")));
        }
        if self.approach == Approach::Implicit && (lo < SIZE_MIN || hi > SIZE_MAX) {
            return Err(Error::InvalidArgument(format!(
                "implicit sizes must lie within {SIZE_MIN}..{SIZE_MAX}"
            )));
        }
        if self.approach == Approach::Implicit && lo == 1 && hi == 1 {
            return Err(Error::InvalidArgument(
                "batchnorm needs bitmaps of at least 2 pixels".into(),
            ));
        }
        let schedule = self.schedule();
        schedule.validate()?;
        if let Some(last) = schedule.last_epoch() {
            if self.epochs() > last {
                return Err(Error::InvalidArgument(format!(
                    "{} epochs requested but the schedule ends at epoch {last}",
                    self.epochs()
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(match self.approach {
            Approach::Masked => ModelConfig::Masked(MaskedMlpConfig {
                size_min: self.sizes.0,
                size_max: self.sizes.1,
                encoder_widths: self.masked.encoder_widths.clone(),
                side: SIZE_MAX.max(self.sizes.1),
            }),
            Approach::Implicit => {
                let o = &self.implicit;
                let encoder = if o.random_powers {
                    FrequencyEncoder::seeded_random(o.frequency_pairs, o.power_lo, o.power_hi, self.seed)?
                } else {
                    FrequencyEncoder::grid(o.frequency_pairs, o.power_lo, o.power_hi)?
                };
                ModelConfig::Implicit(ImplicitConfig {
                    size_min: self.sizes.0,
                    size_max: self.sizes.1,
                    hidden_width: o.hidden_width,
                    latent_width: o.latent_width,
                    representation_depth: o.representation_depth,
                    intensity_depth: o.intensity_depth,
                    encoder,
                    frequency_encoding: !self.ablation.no_freq_encoding,
                    use_weight: self.weights.len() > 1,
                    ..ImplicitConfig::default()
                })
            }
        })
    }

    fn batchnorm_training(&self) -> BatchNormMode {
        if self.ablation.no_memorization_adaptations {
            BatchNormMode::StandardTrain
        } else {
            BatchNormMode::Memorize
        }
    }

    /// The copy embedded in checkpoints; the output path is per run.
    pub fn stored(&self) -> TrainJob {
        TrainJob {
            output: None,
            ..self.clone()
        }
    }

    /// Fields that must agree between a checkpoint and a job resuming it.
    fn trajectory_key(&self) -> TrainJob {
        TrainJob {
            dataset: None,
            epochs: None,
            output: None,
            checkpoint_every: 0,
            ..self.clone()
        }
    }
}

/// One line of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GlyphModel,
    pub history: Vec<EpochRecord>,
    /// Optimizer steps skipped because of a non-finite gradient.
    pub skipped_steps: usize,
}

/// Writes the loss history as `epoch,mean_loss,lr` CSV.
pub fn write_history_csv(history: &[EpochRecord], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Creates the untrained model for a job.
pub fn initialize(job: &TrainJob, ds: &Dataset) -> Result<GlyphModel> {
    job.validate()?;
    let config = job.model_config()?;
    let model = Model::new(&config)?;
    let layers = model.layer_specs();
    let mut store = init_params(&layers, job.seed)?;
    store.offsets = layer_offsets(&layers);
    let weights = job
        .weights
        .iter()
        .map(|w| {
            let value = if job.weights.len() > 1 {
                ds.manifest()
                    .weight_value(w)
                    .ok_or_else(|| Error::InvalidArgument(format!("weight {w:?} is not in the dataset manifest")))?
            } else {
                0.0
            };
            Ok(WeightEntry { id: w.clone(), value })
        })
        .collect::<Result<Vec<_>>>()?;
    let running_stats = match &model {
        Model::Implicit(m) => m.running_stats(),
        Model::Masked(_) => Vec::new(),
    };
    let meta = ModelMeta {
        model: config,
        layers,
        seed: job.seed,
        font: job.font.clone(),
        glyph: job.glyph,
        weights,
        epochs_completed: 0,
        batchnorm_training: job.batchnorm_training(),
        running_stats,
        job: job.stored(),
    };
    Ok(GlyphModel { meta, model, store })
}

/// Trains a fresh model for `job`. `observer` sees every epoch record.
pub fn train(job: &TrainJob, ds: &Dataset, observer: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let mut model = initialize(job, ds)?;
    let mut history = Vec::new();
    let skipped = run_epochs(job, ds, &mut model, job.epochs(), &mut history, observer)?;
    Ok(TrainOutcome {
        model,
        history,
        skipped_steps: skipped,
    })
}

pub fn train_masked(job: &TrainJob, ds: &Dataset, observer: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    if job.approach != Approach::Masked {
        return Err(Error::InvalidArgument("job approach is not masked".into()));
    }
    train(job, ds, observer)
}

pub fn train_implicit(job: &TrainJob, ds: &Dataset, observer: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    if job.approach != Approach::Implicit {
        return Err(Error::InvalidArgument("job approach is not implicit".into()));
    }
    train(job, ds, observer)
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ResumeOutcome {
    Trained(TrainOutcome),
    /// The checkpoint already covers every epoch of the job.
    AlreadyComplete {
        model: Box<GlyphModel>,
        epochs_completed: u32,
    },
}

/// Continues training a checkpoint up to `job`'s epoch count.
pub fn resume(
    job: &TrainJob,
    mut model: GlyphModel,
    ds: &Dataset,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<ResumeOutcome> {
    job.validate()?;
    if model.meta.job.approach != job.approach {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint was trained with the {:?} approach, job asks for {:?}",
            model.meta.job.approach, job.approach
        )));
    }
    if model.meta.job.trajectory_key() != job.trajectory_key() {
        return Err(Error::ConfigMismatch(
            "checkpoint job differs from this job beyond epochs/output".into(),
        ));
    }
    let done = model.meta.epochs_completed;
    if done >= job.epochs() {
        return Ok(ResumeOutcome::AlreadyComplete {
            model: Box::new(model),
            epochs_completed: done,
        });
    }
    model.meta.job = job.stored();
    let mut history = Vec::new();
    let skipped = run_epochs(job, ds, &mut model, job.epochs(), &mut history, observer)?;
    Ok(ResumeOutcome::Trained(TrainOutcome {
        model,
        history,
        skipped_steps: skipped,
    }))
}

enum Prepared {
    Masked(Vec<(usize, Tensor2, SamplingMask)>),
    Implicit(Vec<(usize, Option<f64>, Vec<usize>)>),
}

fn prepare(job: &TrainJob, ds: &Dataset, model: &GlyphModel) -> Result<Prepared> {
    let bitmaps = ds.select(&job.font, &job.weights, job.glyph, job.size_range())?;
    match &model.model {
        Model::Masked(m) => {
            let side = m.config().output_side();
            bitmaps
                .into_iter()
                .map(|b| {
                    Ok((
                        b.bitmap_size,
                        upsample(&b.pixels, side)?,
                        build_mask(b.bitmap_size, side)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()
                .map(Prepared::Masked)
        }
        Model::Implicit(_) => bitmaps
            .into_iter()
            .map(|b| {
                let weight = model.conditioning(Some(&b.weight_id))?;
                let targets = b
                    .pixels
                    .data()
                    .iter()
                    .map(|&v| quantize_intensity(v))
                    .collect::<Result<Vec<_>>>()?;
                Ok((b.bitmap_size, weight, targets))
            })
            .collect::<Result<Vec<_>>>()
            .map(Prepared::Implicit),
    }
}

fn epoch_seed(seed: u64, epoch: u32) -> u64 {
    seed ^ u64::from(epoch).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs epochs `completed+1 ..= until`, checkpointing at the job's cadence.
fn run_epochs(
    job: &TrainJob,
    ds: &Dataset,
    model: &mut GlyphModel,
    until: u32,
    history: &mut Vec<EpochRecord>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<usize> {
    let data = prepare(job, ds, model)?;
    let schedule = job.schedule();
    let adam = AdamConfig::default();
    let gamma = job.implicit.focal_gamma;
    let mut skipped = 0;
    let GlyphModel {
        meta,
        model: net,
        store,
    } = model;

    for epoch in meta.epochs_completed + 1..=until {
        let lr = schedule.lr_at(epoch)?;
        let mut total = 0.0;
        let count;
        match (&*net, &data) {
            (Model::Masked(m), Prepared::Masked(items)) => {
                count = items.len();
                for (size, gt_up, mask) in items {
                    let (out, trace) = m.forward(store, *size)?;
                    let (loss, dout) = masked_l2_loss(&out, gt_up, mask)?;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!("loss at epoch {epoch}, size {size}")));
                    }
                    let mut grads = vec![0.0; store.len()];
                    m.backward(store, &trace, &dout, &mut grads)?;
                    if store.apply_adam(&grads, lr, &adam)? != StepOutcome::Applied {
                        skipped += 1;
                    }
                    total += loss;
                }
            }
            (Model::Implicit(m), Prepared::Implicit(items)) => {
                count = items.len();
                let mut order: Vec<usize> = (0..items.len()).collect();
                if job.ablation.no_memorization_adaptations {
                    order.shuffle(&mut seeded_rng(epoch_seed(job.seed, epoch)));
                }
                for &i in &order {
                    let (size, weight, targets) = &items[i];
                    let mut grads = vec![0.0; store.len()];
                    let (loss, _) = m.loss_and_grads(
                        store,
                        *size,
                        *weight,
                        targets,
                        gamma,
                        meta.batchnorm_training,
                        &mut meta.running_stats,
                        &mut grads,
                    )?;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!("loss at epoch {epoch}, size {size}")));
                    }
                    if store.apply_adam(&grads, lr, &adam)? != StepOutcome::Applied {
                        skipped += 1;
                    }
                    total += loss;
                }
            }
            _ => unreachable!("prepared data matches the model kind"),
        }
        meta.epochs_completed = epoch;
        let record = EpochRecord {
            epoch,
            mean_loss: total / count.max(1) as f64,
            lr,
        };
        observer(&record);
        history.push(record);
        if let Some(out) = &job.output {
            if job.checkpoint_every > 0 && epoch % job.checkpoint_every == 0 && epoch != until {
                save_checkpoint_of(meta, store, out)?;
            }
        }
    }
    if let Some(out) = &job.output {
        save_checkpoint_of(meta, store, out)?;
    }
    Ok(skipped)
}

fn save_checkpoint_of(meta: &ModelMeta, store: &crate::tensornet::ParamStore, path: &std::path::Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    crate::tensornet::save_checkpoint(store, meta, path)
}
