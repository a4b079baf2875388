//! Training hyperparameters and their validation.

use idsprite_diffusion::{build_schedule, NoiseSchedule, ScheduleKind};
use serde::{Deserialize, Serialize};

use crate::TrainError;

/// The two training stages. Stage 1 trains conditioner and denoiser jointly
/// with face features in the condition stream but no face latent; stage 2
/// adds the face latent, the stochastic drop, and the masked box term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(format!("stage must be 1 or 2, got {other}")),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Everything needed to rebuild a noise schedule exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    /// "linear" or "cosine".
    pub kind: String,
    /// Number of diffusion steps T.
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleSpec {
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Self {
        ScheduleSpec { kind: ScheduleKind::Linear.as_str().into(), steps, beta_min, beta_max }
    }

    pub fn build(&self) -> Result<NoiseSchedule, TrainError> {
        let kind = ScheduleKind::parse(&self.kind)?;
        Ok(build_schedule(self.steps, kind, self.beta_min, self.beta_max)?)
    }
}

/// Hyperparameters for one training stage. The full-scale constructors
/// record the reference settings; desk runs shrink the batch and iteration
/// counts but keep the drop ratio and mask weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Per-sample probability of dropping the face conditioning. Stage 2
    /// only; stage 1 has no face latent to drop.
    pub drop_ratio: Option<f64>,
    /// Weight of the masked face reconstruction term; unused at stage 1.
    pub mask_weight: f64,
    /// Extra latent cells around each mapped face box.
    pub mask_dilation: usize,
    /// Root seed for parameter init (stage 1), batch composition, noise
    /// draws, and drop decisions.
    pub seed: u64,
    pub schedule: ScheduleSpec,
    /// Expected corpus mix (paired, cross-paired, generated-cross-paired);
    /// checked against the corpus manifest.
    pub mix: [f64; 3],
    /// Every k-th sample is held out of training batches (0 = train on all).
    pub holdout_every: usize,
    /// Record a held-out loss point every this many steps (0 = never).
    pub eval_every: usize,
}

impl TrainingConfig {
    /// Reference settings for the conditioning pretraining stage at full
    /// scale: batch 256, lr 2e-4, 20k iterations.
    pub fn full_scale_stage1(seed: u64) -> Self {
        TrainingConfig {
            stage: Stage::One,
            batch_size: 256,
            learning_rate: 2e-4,
            iterations: 20_000,
            drop_ratio: None,
            mask_weight: 0.0,
            mask_dilation: 0,
            seed,
            schedule: ScheduleSpec::linear(1000, 1e-4, 0.02),
            mix: [0.5, 0.25, 0.25],
            holdout_every: 0,
            eval_every: 0,
        }
    }

    /// Reference settings for the complete training stage at full scale:
    /// batch 320, lr 2e-5, 50k iterations, drop ratio 0.1, mask weight 1.0.
    pub fn full_scale_stage2(seed: u64) -> Self {
        TrainingConfig {
            stage: Stage::Two,
            batch_size: 320,
            learning_rate: 2e-5,
            iterations: 50_000,
            drop_ratio: Some(0.1),
            mask_weight: 1.0,
            mask_dilation: 0,
            seed,
            schedule: ScheduleSpec::linear(1000, 1e-4, 0.02),
            mix: [0.5, 0.25, 0.25],
            holdout_every: 0,
            eval_every: 0,
        }
    }

    /// Desk-scale stage 1: small batches over a short schedule, sized for
    /// CPU runs on the synthetic corpus.
    pub fn desk_stage1(seed: u64) -> Self {
        TrainingConfig {
            batch_size: 8,
            learning_rate: 2e-3,
            iterations: 800,
            schedule: ScheduleSpec::linear(50, 1e-4, 0.2),
            holdout_every: 6,
            ..Self::full_scale_stage1(seed)
        }
    }

    /// Desk-scale stage 2; keeps the full-scale drop ratio and mask weight.
    pub fn desk_stage2(seed: u64) -> Self {
        TrainingConfig {
            batch_size: 8,
            learning_rate: 5e-4,
            iterations: 800,
            schedule: ScheduleSpec::linear(50, 1e-4, 0.2),
            holdout_every: 6,
            ..Self::full_scale_stage2(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be finite and positive",
                self.learning_rate
            )));
        }
        if !(self.mask_weight >= 0.0 && self.mask_weight.is_finite()) {
            return Err(TrainError::Config(format!(
                "mask weight {} must be finite and >= 0",
                self.mask_weight
            )));
        }
        match (self.stage, self.drop_ratio) {
            (Stage::One, Some(_)) => {
                return Err(TrainError::Config(
                    "stage 1 has no face latent; drop_ratio must be unset".into(),
                ));
            }
            (Stage::Two, None) => {
                return Err(TrainError::Config("stage 2 requires a drop_ratio".into()));
            }
            (Stage::Two, Some(p)) if !(0.0..=1.0).contains(&p) => {
                return Err(TrainError::Config(format!("drop_ratio {p} outside [0, 1]")));
            }
            _ => {}
        }
        if self.mix.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(TrainError::Config(format!("mix {:?} has negative entries", self.mix)));
        }
        if self.mix.iter().sum::<f64>() <= 0.0 {
            return Err(TrainError::Config("mix must have positive total".into()));
        }
        if self.holdout_every == 1 {
            return Err(TrainError::Config(
                "holdout_every = 1 would hold out every sample".into(),
            ));
        }
        if self.eval_every > 0 && self.holdout_every < 2 {
            return Err(TrainError::Config(
                "periodic eval needs held-out samples; set holdout_every >= 2".into(),
            ));
        }
        self.schedule.build()?;
        Ok(())
    }
}
