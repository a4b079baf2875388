//! The learned components: frozen feature encoders (vision, identity, text,
//! latent codec), the identity-image-text fusion module that merges them
//! into one conditioning stream, the conditional transformer denoiser, and
//! the attribute classifiers used by evaluation.

pub mod artifact;
pub mod classifier;
pub mod codec;
pub mod denoiser;
pub mod encoders;
pub mod genmodel;
pub mod iitf;
pub mod pretrain;
pub mod resize;
pub mod text;

pub use artifact::{load_encoders, save_encoders, EncoderHashes, EncoderHeader, EncoderSet};
pub use classifier::{
    bg_class, color_class, default_window_sizes, iou, marking_class, motion_class,
    occlusion_class, scale_class, shape_class, AttrAccuracy, AttrNets, AttrPrediction, Detection,
};
pub use codec::LatentCodec;
pub use denoiser::{time_features, ConditioningBundle, Denoiser, DenoiserConfig};
pub use encoders::{cosine, EncoderConfig, IdentityEncoder, VisionEncoder};
pub use genmodel::{sample_video, GenModel, GenModelConfig, SampleOutput};
pub use iitf::{CondKind, Conditioner, ConditionStreams, FusedCondition, Iitf, IitfConfig};
pub use pretrain::{pretrain_encoders, PretrainConfig, PretrainReport};
pub use text::{tokenize, vocabulary, PromptFeature, TextEncoder};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("word not in the caption vocabulary: {0:?}")]
    OutOfVocabulary(String),
    #[error("caption is empty")]
    EmptyCaption,
    #[error("caption has {len} tokens, encoder supports at most {max}")]
    CaptionTooLong { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("timestep {t} out of range 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("encoder artifact was trained on corpus {artifact} but the active corpus is {active} (pass the override flag to load anyway)")]
    CorpusHashMismatch { artifact: String, active: String },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Core(#[from] idsprite_core::CoreError),
    #[error(transparent)]
    World(#[from] idsprite_world::WorldError),
    #[error(transparent)]
    Diffusion(#[from] idsprite_diffusion::DiffusionError),
}
