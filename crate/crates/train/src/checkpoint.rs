//! Checkpoint archive: model parameters split by role, optimizer moments,
//! and a header echoing every config needed to rebuild the run.

use std::path::Path;

use idsprite_core::io::{read_archive, write_archive};
use idsprite_core::Arr;
use idsprite_model::GenModelConfig;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::TrainError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Everything about a training run that is not a tensor. Loading validates
/// this echo against the active configs instead of trusting the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: GenModelConfig,
    pub train: TrainingConfig,
    /// Training steps completed in this stage.
    pub step: usize,
    /// Optimizer step counter (bias-correction time index).
    pub opt_step: u64,
    /// Seed the model parameters were initialized from.
    pub model_seed: u64,
    /// Combined hash of the frozen encoder set this run trained against.
    pub encoder_hash: String,
    /// Exact noise schedule serialization, cross-checked on resume.
    pub schedule_text: String,
    /// Face-conditioning drops taken / decisions made so far.
    pub drop_count: u64,
    pub drop_total: u64,
    /// Face latents the training cache held (0 at stage 1).
    pub face_latents_built: u64,
    /// Content hash of the full parameter store at save time.
    pub params_hash: String,
}

/// An on-disk training snapshot: header plus four tensor sections.
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub conditioner: Vec<(String, Arr)>,
    pub denoiser: Vec<(String, Arr)>,
    pub opt_m: Vec<(String, Arr)>,
    pub opt_v: Vec<(String, Arr)>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let header = serde_json::to_string(&self.header)
            .map_err(|e| TrainError::Artifact(format!("header encode: {e}")))?;
        write_archive(
            path,
            CHECKPOINT_FORMAT_VERSION,
            &header,
            &[
                ("conditioner", self.conditioner.clone()),
                ("denoiser", self.denoiser.clone()),
                ("opt_m", self.opt_m.clone()),
                ("opt_v", self.opt_v.clone()),
            ],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let archive = read_archive(path)?;
        if archive.version != CHECKPOINT_FORMAT_VERSION {
            return Err(TrainError::Artifact(format!(
                "checkpoint archive version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
                archive.version
            )));
        }
        let header: CheckpointHeader = serde_json::from_str(&archive.header)
            .map_err(|e| TrainError::Artifact(format!("header decode: {e}")))?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(TrainError::Artifact(format!(
                "checkpoint header version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
                header.format_version
            )));
        }
        let section = |name: &str| {
            archive
                .sections
                .get(name)
                .cloned()
                .ok_or_else(|| TrainError::Artifact(format!("archive missing section '{name}'")))
        };
        Ok(Checkpoint {
            header,
            conditioner: section("conditioner")?,
            denoiser: section("denoiser")?,
            opt_m: section("opt_m")?,
            opt_v: section("opt_v")?,
        })
    }

    /// Reject a checkpoint whose recorded configs differ from the ones the
    /// caller is about to run with.
    pub fn validate_against(
        &self,
        model_cfg: &GenModelConfig,
        train_cfg: &TrainingConfig,
    ) -> Result<(), TrainError> {
        if self.header.model != *model_cfg {
            return Err(TrainError::CheckpointMismatch(
                "model config differs from the checkpoint's recorded config".into(),
            ));
        }
        if self.header.train != *train_cfg {
            return Err(TrainError::CheckpointMismatch(
                "training config differs from the checkpoint's recorded config".into(),
            ));
        }
        Ok(())
    }
}
