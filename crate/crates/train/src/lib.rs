//! Two-stage training of the conditional video denoiser.
//!
//! Stage 1 trains the conditioner and denoiser jointly with face features in
//! the condition stream but no face latent. Stage 2 adds the face latent,
//! drops it stochastically so the model cannot grow dependent on it, and
//! augments the noise-prediction objective with a reconstruction term
//! restricted to the latent cells under the face box.

mod cache;
mod checkpoint;
mod config;
mod mask;
mod trainer;

pub use cache::{CropCond, TrainCache};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT_VERSION};
pub use config::{ScheduleSpec, Stage, TrainingConfig};
pub use mask::{
    box_to_latent_mask, masked_face_loss, resized_latent_mask, total_loss, BoxMask, LossBreakdown,
};
pub use trainer::{
    drop_flag, face_region_mse, log_to_jsonl, train_stage1, train_stage2, EvalPoint, LogRecord,
    Trainer,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("frame {frame} is visible but carries an empty face box")]
    EmptyBox { frame: usize },
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("checkpoint was trained against encoders {expected} but the active set hashes to {actual}")]
    EncoderMismatch { expected: String, actual: String },
    #[error("encoder parameters changed during training (frozen-encoder contract broken)")]
    EncoderDrift,
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Model(#[from] idsprite_model::ModelError),
    #[error(transparent)]
    Diffusion(#[from] idsprite_diffusion::DiffusionError),
    #[error(transparent)]
    Core(#[from] idsprite_core::CoreError),
}
