//! Deterministic RNG streams.
//!
//! Every random draw in the workspace derives from an explicit
//! `(seed, label, indices)` triple, so independent streams never share
//! state and any step of a pipeline can be reproduced in isolation.

use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::Arr;

/// Derive an independent ChaCha8 stream from a root seed, a purpose label,
/// and a list of indices (step, sample, ...).
pub fn stream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([label.len() as u8]);
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Standard-normal tensor of the given shape.
pub fn normal<R: Rng>(rng: &mut R, shape: &[usize]) -> Arr {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Arr::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}

/// Uniform tensor in [lo, hi).
pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Arr {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Arr::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}
