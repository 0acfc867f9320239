//! Deterministic from-scratch neural substrate: matrices, layers with exact
//! backward passes, losses, Adam, learning-rate schedules and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod network;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, StepOutcome};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{BatchNormMode, LayerSpec, RunningStats};
pub use loss::{focal_loss, focal_loss_batch, masked_l2_loss, DEFAULT_FOCAL_GAMMA};
pub use network::Sequential;
pub use params::{init_params, seeded_rng, ParamStore};
pub use schedule::{LrSchedule, Segment};
pub use tensor::Tensor2;
