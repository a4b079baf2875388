//! The generative model: one parameter store holding conditioner and
//! denoiser, plus the sampling loop that turns a prompt and an optional
//! reference crop into a clip.

use idsprite_core::nn::ParamStore;
use idsprite_core::{rng, Arr};
use idsprite_diffusion::{sample_loop_with, NoiseSchedule};
use idsprite_world::{FaceCrop, Frames};
use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::artifact::EncoderSet;
use crate::denoiser::{ConditioningBundle, Denoiser, DenoiserConfig};
use crate::iitf::{CondKind, Conditioner, FusedCondition, IitfConfig};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenModelConfig {
    pub denoiser: DenoiserConfig,
    pub iitf: IitfConfig,
    pub cond_kind: CondKind,
}

impl GenModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.denoiser.validate()?;
        if self.iitf.d_c != self.denoiser.cond_dim {
            return Err(ModelError::ConfigMismatch(format!(
                "condition width {} does not match denoiser cross-attention width {}",
                self.iitf.d_c, self.denoiser.cond_dim
            )));
        }
        let wants_dual = self.cond_kind == CondKind::DualBranch;
        if wants_dual != self.denoiser.dual_stream {
            return Err(ModelError::ConfigMismatch(
                "conditioner kind and denoiser stream layout disagree".into(),
            ));
        }
        Ok(())
    }
}

/// Conditioner + denoiser sharing one parameter store, so a single backward
/// pass trains both jointly.
pub struct GenModel {
    pub store: ParamStore,
    pub conditioner: Conditioner,
    pub denoiser: Denoiser,
    pub config: GenModelConfig,
    pub seed: u64,
}

impl GenModel {
    pub fn new(config: GenModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "model/init", &[]);
        let conditioner = Conditioner::new(&mut store, config.cond_kind, &config.iitf, &mut r);
        let denoiser = Denoiser::new(&mut store, &config.denoiser, &mut r)?;
        Ok(GenModel { store, conditioner, denoiser, config, seed })
    }

    /// Evaluate the condition stream for a prompt and optional face features.
    pub fn condition(
        &self,
        prompt: &Array2<f64>,
        face: Option<(&Array1<f64>, &Array1<f64>)>,
    ) -> FusedCondition {
        self.conditioner.condition(&self.store, prompt, face)
    }

    /// Parameters split into (conditioner, denoiser) sections by name prefix.
    pub fn export_split(&self) -> (Vec<(String, Arr)>, Vec<(String, Arr)>) {
        let all = self.store.export();
        let mut cond = Vec::new();
        let mut den = Vec::new();
        for (name, v) in all {
            if name.starts_with("den.") {
                den.push((name, v));
            } else {
                cond.push((name, v));
            }
        }
        (cond, den)
    }

    /// Restore from the two checkpoint sections produced by `export_split`.
    pub fn import_split(
        &mut self,
        cond: &[(String, Arr)],
        den: &[(String, Arr)],
    ) -> Result<(), ModelError> {
        let mut all = cond.to_vec();
        all.extend_from_slice(den);
        self.store.import(&all).map_err(ModelError::Artifact)
    }

    pub fn params_hash(&self) -> String {
        self.store.content_hash()
    }
}

/// A sampled clip with its decoded frames and generation metadata.
pub struct SampleOutput {
    pub frames: Frames,
    pub latent: Array4<f64>,
    /// Whether a reference crop conditioned the sample (false means the
    /// null-face path was used throughout).
    pub used_face: bool,
}

/// Run the full reverse loop: encode the prompt and reference, denoise from
/// pure noise, decode to pixels.
#[allow(clippy::too_many_arguments)]
pub fn sample_video(
    model: &GenModel,
    enc: &EncoderSet,
    sched: &NoiseSchedule,
    prompt: &str,
    ref_crop: Option<&FaceCrop>,
    frame_h: usize,
    frame_w: usize,
    eta: f64,
    steps: usize,
    seed: u64,
) -> Result<SampleOutput, ModelError> {
    let dcfg = *model.denoiser.config();
    if sched.t_max() != dcfg.t_max {
        return Err(ModelError::ConfigMismatch(format!(
            "schedule has {} steps, denoiser expects {}",
            sched.t_max(),
            dcfg.t_max
        )));
    }
    let (lh, lw) = enc.codec.latent_size(frame_h, frame_w)?;
    if (lh, lw) != (dcfg.latent_h, dcfg.latent_w) {
        return Err(ModelError::ConfigMismatch(format!(
            "frame {frame_h}x{frame_w} maps to latent {lh}x{lw}, denoiser expects {}x{}",
            dcfg.latent_h, dcfg.latent_w
        )));
    }
    if enc.codec.channels != dcfg.channels {
        return Err(ModelError::ConfigMismatch(format!(
            "codec has {} latent channels, denoiser expects {}",
            enc.codec.channels, dcfg.channels
        )));
    }

    let pf = enc.text.encode(prompt)?;
    let (cond, z_face) = match ref_crop {
        Some(crop) => {
            let f_vision = enc.vision.encode(crop)?;
            let f_id = enc.identity.encode(crop)?;
            let z_face = enc.codec.encode_face(crop, frame_h, frame_w)?;
            (model.condition(&pf.tokens, Some((&f_vision, &f_id))), Some(z_face))
        }
        None => (model.condition(&pf.tokens, None), None),
    };
    let used_face = ref_crop.is_some();
    let bundle = ConditioningBundle { cond, z_face, drop_flag: false };

    let shape = [dcfg.frames, dcfg.channels, dcfg.latent_h, dcfg.latent_w];
    let latent = sample_loop_with(sched, shape, steps, eta, seed, |z_t, t| {
        model
            .denoiser
            .denoise(&model.store, z_t.data(), t, &bundle)
            .expect("denoiser rejected a validated sampling input")
    })?;

    let pixels = enc.codec.decode_frames(latent.data())?;
    let mut frames = Frames::new(dcfg.frames, frame_h, frame_w);
    for f in 0..dcfg.frames {
        for c in 0..3 {
            for y in 0..frame_h {
                for x in 0..frame_w {
                    frames.set(f, c, y, x, pixels[[f, c, y, x]]);
                }
            }
        }
    }
    Ok(SampleOutput { frames, latent: latent.data().clone(), used_face })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(kind: CondKind) -> GenModelConfig {
        GenModelConfig {
            denoiser: DenoiserConfig {
                frames: 2,
                channels: 2,
                latent_h: 4,
                latent_w: 4,
                patch: 2,
                dim: 16,
                depth: 1,
                heads: 2,
                mlp_ratio: 2,
                cond_dim: 12,
                time_dim: 8,
                t_max: 10,
                dual_stream: kind == CondKind::DualBranch,
                zero_head: true,
            },
            iitf: IitfConfig { d_v: 10, d_t: 6, d_id: 5, d_f: 8, d_c: 12, face_tokens: 2 },
            cond_kind: kind,
        }
    }

    #[test]
    fn mismatched_widths_are_rejected() {
        let mut cfg = tiny_config(CondKind::Fused);
        cfg.iitf.d_c = 8;
        assert!(GenModel::new(cfg, 1).is_err());

        let mut cfg = tiny_config(CondKind::Fused);
        cfg.denoiser.dual_stream = true;
        assert!(GenModel::new(cfg, 1).is_err());
    }

    #[test]
    fn export_import_round_trips_bitwise() {
        let a = GenModel::new(tiny_config(CondKind::Fused), 3).unwrap();
        let mut b = GenModel::new(tiny_config(CondKind::Fused), 4).unwrap();
        assert_ne!(a.params_hash(), b.params_hash());
        let (cond, den) = a.export_split();
        assert!(cond.iter().all(|(n, _)| n.starts_with("iitf.")));
        assert!(den.iter().all(|(n, _)| n.starts_with("den.")));
        b.import_split(&cond, &den).unwrap();
        assert_eq!(a.params_hash(), b.params_hash());
    }

    #[test]
    fn import_rejects_missing_sections() {
        let a = GenModel::new(tiny_config(CondKind::Fused), 3).unwrap();
        let mut b = GenModel::new(tiny_config(CondKind::Fused), 4).unwrap();
        let (cond, _) = a.export_split();
        assert!(b.import_split(&cond, &[]).is_err());
    }

    #[test]
    fn seeds_change_parameters_deterministically() {
        let a = GenModel::new(tiny_config(CondKind::Fused), 7).unwrap();
        let b = GenModel::new(tiny_config(CondKind::Fused), 7).unwrap();
        assert_eq!(a.params_hash(), b.params_hash());
    }
}
