//! Procedural sprite-video world: identity-labeled synthetic clips, tight
//! per-frame bounding boxes, templated captions, and the three-way pairing
//! pipeline (paired / cross-paired / generated-cross-paired) that supplies
//! reference crops for identity-conditioned training.

pub mod caption;
pub mod dataset;
pub mod frames;
pub mod identity;
pub mod io;
pub mod render;
pub mod scene;

pub use caption::{caption, CaptionStyle, ConflictAttr, ConflictSpec};
pub use dataset::{
    build_dataset, crop_indices, five_crops, Dataset, Manifest, PairKind, PairSample, WorldParams,
};
pub use frames::{extract_face, FaceCrop, Frames, PixelBox, SpriteVideo};
pub use identity::{
    allocate_identities, sample_identity, ColorName, IdentitySpec, Marking, Shape, IDENTITY_SPACE,
};
pub use render::render_video;
pub use scene::{sample_scene, BgColor, Motion, Occlusion, SceneSpec, SCALE_LARGE, SCALE_SMALL};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("attribute space exhausted: requested {requested} identities, only {available} distinct combinations exist")]
    AttributeSpaceExhausted { requested: usize, available: usize },
    #[error("frame geometry too small: {h}x{w} (minimum 16x16)")]
    FrameTooSmall { h: usize, w: usize },
    #[error("frame count must be >= 1")]
    NoFrames,
    #[error("sprite with outer radius {radius:.2} px cannot fit in a {h}x{w} frame")]
    SpriteDoesNotFit { radius: f64, h: usize, w: usize },
    #[error("start position ({x:.2}, {y:.2}) places the sprite outside the frame")]
    StartOutOfBounds { x: f64, y: f64 },
    #[error("no sprite detected on frame {frame} (fully occluded or out of view)")]
    NoDetection { frame: usize },
    #[error("video has no frame with a visible sprite")]
    NoVisibleFrames,
    #[error("frame index {index} out of range for {frames} frames")]
    FrameIndexOutOfRange { index: usize, frames: usize },
    #[error("invalid pair mix: {0}")]
    BadMix(String),
    #[error("cross-paired samples need at least 2 videos per identity")]
    NeedsMultipleVideos,
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
