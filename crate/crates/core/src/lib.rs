//! Shared numeric infrastructure: deterministic RNG streams, a small
//! reverse-mode autodiff tape over f64 `ndarray` tensors, neural-net layers,
//! an Adam optimizer, and a binary tensor-archive format for artifacts.
//!
//! Everything here is single-threaded and deterministic: the same seeds
//! produce bit-identical results within one build.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod nn;
pub mod opt;
pub mod rng;

pub use error::CoreError;
pub use graph::{Activation, Graph, NodeId};
pub use nn::{Embedding, LayerNorm, Linear, ParamId, ParamStore};
pub use opt::Adam;

/// Dynamic-dimension f64 tensor used throughout the workspace.
pub type Arr = ndarray::ArrayD<f64>;
