//! Vision and identity encoders over face crops.
//!
//! Both share the same preprocessing (bilinear resize to a fixed input size,
//! channel-major flatten) and a two-layer MLP trunk, but are trained on
//! different objectives: the vision encoder contrastively against captions,
//! the identity encoder with a classification head over identity ids that is
//! discarded afterwards. The two output spaces are deliberately distinct.

use idsprite_core::nn::{Mlp2, ParamStore};
use idsprite_core::{rng, Graph};
use idsprite_world::FaceCrop;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::resize::{flatten_image, resize_bilinear};
use crate::ModelError;

/// Dimensions shared by the encoder family and the latent codec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Vision feature width (shared crop/caption space).
    pub d_v: usize,
    /// Text token feature width.
    pub d_t: usize,
    /// Identity embedding width.
    pub d_id: usize,
    /// Crops and frames are resized to this square size before encoding.
    pub input_size: usize,
    /// Hidden width of the encoder MLP trunks.
    pub trunk_hidden: usize,
    /// Spatial downsample factor of the latent codec (power of two).
    pub f: usize,
    /// Latent channels of the codec.
    pub latent_channels: usize,
    /// Hidden width of the codec's patch MLPs.
    pub codec_hidden: usize,
    /// Maximum caption length in tokens.
    pub max_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_v: 64,
            d_t: 64,
            d_id: 32,
            input_size: 16,
            trunk_hidden: 128,
            f: 4,
            latent_channels: 4,
            codec_hidden: 64,
            max_tokens: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.f.is_power_of_two() {
            return Err(ModelError::ConfigMismatch(format!(
                "downsample factor {} is not a power of two",
                self.f
            )));
        }
        if self.d_v == 0 || self.d_t == 0 || self.d_id == 0 || self.latent_channels == 0 {
            return Err(ModelError::ConfigMismatch("zero-width feature space".into()));
        }
        Ok(())
    }

    pub fn flat_input(&self) -> usize {
        3 * self.input_size * self.input_size
    }
}

/// Resize-and-flatten a crop into an encoder input row.
pub fn crop_features(crop: &FaceCrop, input_size: usize) -> Result<Array1<f64>, ModelError> {
    let img = crop.to_array3();
    if img.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("crop pixels".into()));
    }
    Ok(flatten_image(&resize_bilinear(&img, input_size, input_size)))
}

pub(crate) fn build_vision<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    rng_: &mut R,
) -> Mlp2 {
    Mlp2::new(store, "vision.mlp", cfg.flat_input(), cfg.trunk_hidden, cfg.d_v, rng_)
}

pub(crate) fn build_identity<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    rng_: &mut R,
) -> Mlp2 {
    Mlp2::new(store, "id.mlp", cfg.flat_input(), cfg.trunk_hidden, cfg.d_id, rng_)
}

fn encode_rows(mlp: &Mlp2, store: &ParamStore, rows: &Array2<f64>) -> Array2<f64> {
    let mut g = Graph::new();
    let x = g.constant(rows.clone().into_dyn());
    let y = mlp.forward(&mut g, store, x);
    let y = g.l2_normalize_rows(y);
    let v = g.value(y);
    Array2::from_shape_vec((rows.nrows(), v.shape()[1]), v.iter().cloned().collect())
        .expect("encoder output shape")
}

/// Unit-norm semantic features of face crops, aligned with the caption
/// space by contrastive pretraining.
pub struct VisionEncoder {
    pub store: ParamStore,
    pub(crate) mlp: Mlp2,
    pub input_size: usize,
    pub d_v: usize,
}

impl VisionEncoder {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "vision/init", &[]);
        let mlp = build_vision(&mut store, cfg, &mut r);
        VisionEncoder { store, mlp, input_size: cfg.input_size, d_v: cfg.d_v }
    }

    pub fn encode(&self, crop: &FaceCrop) -> Result<Array1<f64>, ModelError> {
        let row = crop_features(crop, self.input_size)?;
        Ok(self.encode_row(&row))
    }

    /// Encode a preprocessed feature row (resize+flatten already applied).
    pub fn encode_row(&self, row: &Array1<f64>) -> Array1<f64> {
        let rows = row.clone().insert_axis(ndarray::Axis(0));
        let out = encode_rows(&self.mlp, &self.store, &rows);
        out.row(0).to_owned()
    }

    pub fn encode_batch(&self, rows: &Array2<f64>) -> Array2<f64> {
        encode_rows(&self.mlp, &self.store, rows)
    }
}

/// Unit-norm identity embedding; nearest neighbors recover identity_id.
pub struct IdentityEncoder {
    pub store: ParamStore,
    pub(crate) mlp: Mlp2,
    pub input_size: usize,
    pub d_id: usize,
}

impl IdentityEncoder {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "identity/init", &[]);
        let mlp = build_identity(&mut store, cfg, &mut r);
        IdentityEncoder { store, mlp, input_size: cfg.input_size, d_id: cfg.d_id }
    }

    pub fn encode(&self, crop: &FaceCrop) -> Result<Array1<f64>, ModelError> {
        let row = crop_features(crop, self.input_size)?;
        Ok(self.encode_row(&row))
    }

    pub fn encode_row(&self, row: &Array1<f64>) -> Array1<f64> {
        let rows = row.clone().insert_axis(ndarray::Axis(0));
        let out = encode_rows(&self.mlp, &self.store, &rows);
        out.row(0).to_owned()
    }

    pub fn encode_batch(&self, rows: &Array2<f64>) -> Array2<f64> {
        encode_rows(&self.mlp, &self.store, rows)
    }
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use idsprite_world::{render_video, sample_identity, sample_scene};

    fn crop() -> FaceCrop {
        let id = sample_identity(11);
        let scene = sample_scene(11, "enc/test", &[0], 32, 32);
        let video = render_video(&id, &scene, 4, 32, 32).unwrap();
        let f = (0..4).find(|&f| video.visibility[f] > 0.0).unwrap();
        idsprite_world::extract_face(&video, f, "v0").unwrap()
    }

    #[test]
    fn encoding_is_deterministic_and_unit_norm() {
        let enc = VisionEncoder::new(&EncoderConfig::default(), 1);
        let c = crop();
        let a = enc.encode(&c).unwrap();
        let b = enc.encode(&c).unwrap();
        assert_eq!(a, b);
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);
        assert_eq!(a.len(), 64);

        let idenc = IdentityEncoder::new(&EncoderConfig::default(), 1);
        let e = idenc.encode(&c).unwrap();
        assert_eq!(e, idenc.encode(&c).unwrap());
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);
        assert_eq!(e.len(), 32);
    }

    #[test]
    fn crop_size_does_not_matter_after_resize() {
        // Crops of different native sizes map into the same feature space.
        let enc = VisionEncoder::new(&EncoderConfig::default(), 1);
        let c = crop();
        let mut small = c.clone();
        small.pixels = idsprite_world::Frames::new(1, 7, 9);
        let a = enc.encode(&c).unwrap();
        let b = enc.encode(&small).unwrap();
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn different_inputs_give_different_features() {
        let enc = VisionEncoder::new(&EncoderConfig::default(), 1);
        let c = crop();
        let mut dark = c.clone();
        let (h, w) = (dark.pixels.height(), dark.pixels.width());
        let mut repl = idsprite_world::Frames::new(1, h, w);
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    repl.set(0, ch, y, x, 0.05);
                }
            }
        }
        dark.pixels = repl;
        assert_ne!(enc.encode(&c).unwrap(), enc.encode(&dark).unwrap());
    }
}
