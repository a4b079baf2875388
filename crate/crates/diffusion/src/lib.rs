//! Forward diffusion, reverse samplers (deterministic through stochastic via
//! eta), signal reconstruction from predicted noise, and the base
//! noise-prediction loss. All operations are pure functions over their
//! inputs; noise draws derive from explicit seeds.

pub mod sampler;
pub mod schedule;

pub use sampler::{
    ddpm_loss, forward_diffuse, predict_x0, reverse_step, reverse_step_between, sample_loop_with,
    sigma, sigma_between, LatentVideo, NoiseDraw, Provenance,
};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} out of range 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate timestep: alpha_bar is numerically zero at t={0}")]
    DegenerateTimestep(usize),
    #[error("invalid sigma: 1 - alpha_bar_prev - sigma^2 = {0} < 0")]
    InvalidSigma(f64),
    #[error("eta must lie in [0, 1], got {0}")]
    InvalidEta(f64),
    #[error("invalid stride: need t_lo < t_hi, got t_lo={t_lo}, t_hi={t_hi}")]
    InvalidStride { t_hi: usize, t_lo: usize },
    #[error("requested {steps} sampling steps but schedule has T={t_max}")]
    TooManySteps { steps: usize, t_max: usize },
    #[error("non-finite values: {0}")]
    NonFinite(String),
}
