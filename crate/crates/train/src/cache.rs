//! Precomputed per-sample tensors: since every encoder is frozen during
//! training, latents, prompts, crop features, and box masks are computed
//! once up front instead of per batch.

use idsprite_diffusion::{LatentVideo, Provenance};
use idsprite_model::{EncoderSet, GenModelConfig};
use idsprite_world::Dataset;
use ndarray::{Array1, Array2, Array3};

use crate::config::TrainingConfig;
use crate::mask::{box_to_latent_mask, BoxMask};
use crate::TrainError;

/// Frozen features of one reference crop.
#[derive(Debug, Clone)]
pub struct CropCond {
    pub vision: Array1<f64>,
    pub identity: Array1<f64>,
}

/// Everything training needs from the corpus, fully encoded. Indices line
/// up with `Dataset::samples`.
pub struct TrainCache {
    pub z_videos: Vec<LatentVideo>,
    pub masks: Vec<BoxMask>,
    /// Prompt token matrices, one `[n_tokens, d_t]` per sample.
    pub prompts: Vec<Array2<f64>>,
    /// Per-sample reference-crop features (at least one crop each).
    pub crops: Vec<Vec<CropCond>>,
    /// Face latents per reference crop; only built for stage 2, where the
    /// denoiser consumes them.
    pub face_latents: Option<Vec<Vec<Array3<f64>>>>,
    pub frame_size: (usize, usize),
    /// Shape of each video latent: [frames, channels, h, w].
    pub latent_shape: [usize; 4],
}

impl TrainCache {
    pub fn new(
        corpus: &Dataset,
        enc: &EncoderSet,
        model_cfg: &GenModelConfig,
        cfg: &TrainingConfig,
        with_face_latents: bool,
    ) -> Result<Self, TrainError> {
        if corpus.samples.is_empty() {
            return Err(TrainError::Config("corpus has no samples".into()));
        }
        let world = &corpus.manifest.header.world;
        let (frame_h, frame_w) = (world.height, world.width);
        let dcfg = &model_cfg.denoiser;

        let (lh, lw) = enc.codec.latent_size(frame_h, frame_w)?;
        if (lh, lw) != (dcfg.latent_h, dcfg.latent_w) {
            return Err(TrainError::Config(format!(
                "codec maps {frame_h}x{frame_w} frames to {lh}x{lw} latents, \
                 but the denoiser expects {}x{}",
                dcfg.latent_h, dcfg.latent_w
            )));
        }
        if enc.codec.channels != dcfg.channels {
            return Err(TrainError::Config(format!(
                "codec emits {} latent channels, denoiser expects {}",
                enc.codec.channels, dcfg.channels
            )));
        }
        if world.frames != dcfg.frames {
            return Err(TrainError::Config(format!(
                "corpus clips have {} frames, denoiser expects {}",
                world.frames, dcfg.frames
            )));
        }
        let ecfg = &enc.header.config;
        let icfg = &model_cfg.iitf;
        if (icfg.d_v, icfg.d_t, icfg.d_id) != (ecfg.d_v, ecfg.d_t, ecfg.d_id) {
            return Err(TrainError::Config(format!(
                "fusion input widths (d_v {}, d_t {}, d_id {}) do not match the \
                 encoder artifact (d_v {}, d_t {}, d_id {})",
                icfg.d_v, icfg.d_t, icfg.d_id, ecfg.d_v, ecfg.d_t, ecfg.d_id
            )));
        }
        if cfg.mix != corpus.manifest.header.mix {
            return Err(TrainError::Config(format!(
                "config expects corpus mix {:?}, manifest says {:?}",
                cfg.mix, corpus.manifest.header.mix
            )));
        }

        let n = corpus.samples.len();
        let mut z_videos = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut prompts = Vec::with_capacity(n);
        let mut crops = Vec::with_capacity(n);
        let mut face_latents = with_face_latents.then(|| Vec::with_capacity(n));

        for sample in &corpus.samples {
            if sample.reference_crops.is_empty() {
                return Err(TrainError::Config(format!(
                    "sample {} has no reference crops",
                    sample.sample_id
                )));
            }
            let video = &sample.video;
            if video.frame_count() != world.frames {
                return Err(TrainError::Shape(format!(
                    "sample {} has {} frames, corpus header says {}",
                    sample.sample_id,
                    video.frame_count(),
                    world.frames
                )));
            }
            let z = enc.codec.encode_frames(&video.frames.to_array4())?;
            z_videos.push(LatentVideo::new(z, Provenance::EncodedFromVideo)?);
            masks.push(box_to_latent_mask(
                &video.boxes,
                &video.visibility,
                frame_h,
                frame_w,
                ecfg.f,
                cfg.mask_dilation,
            )?);
            prompts.push(enc.text.encode(&sample.caption)?.tokens);

            let mut sample_crops = Vec::with_capacity(sample.reference_crops.len());
            for crop in &sample.reference_crops {
                sample_crops.push(CropCond {
                    vision: enc.vision.encode(crop)?,
                    identity: enc.identity.encode(crop)?,
                });
            }
            crops.push(sample_crops);

            if let Some(lat) = face_latents.as_mut() {
                let mut per_crop = Vec::with_capacity(sample.reference_crops.len());
                for crop in &sample.reference_crops {
                    per_crop.push(enc.codec.encode_face(crop, frame_h, frame_w)?);
                }
                lat.push(per_crop);
            }
        }

        Ok(TrainCache {
            z_videos,
            masks,
            prompts,
            crops,
            face_latents,
            frame_size: (frame_h, frame_w),
            latent_shape: [dcfg.frames, dcfg.channels, lh, lw],
        })
    }

    pub fn len(&self) -> usize {
        self.z_videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_videos.is_empty()
    }

    /// Total number of cached face latents across all samples (0 when the
    /// cache was built without them).
    pub fn face_latent_count(&self) -> usize {
        self.face_latents.as_ref().map_or(0, |v| v.iter().map(Vec::len).sum())
    }
}
