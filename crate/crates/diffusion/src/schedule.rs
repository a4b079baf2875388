//! Noise schedules: beta sequences and their cumulative alpha products.

use std::fmt::Write as _;

use crate::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl ScheduleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DiffusionError> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(DiffusionError::InvalidSchedule(format!(
                "unknown schedule kind {other:?}"
            ))),
        }
    }
}

/// Beta sequence with precomputed cumulative products.
///
/// Indexing is 1-based to match the usual timestep convention:
/// `beta(t)` and `alpha_bar(t)` accept `1..=T`, and `alpha_bar(0) == 1`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta_min: f64,
    beta_max: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.t_max(), "beta index out of range");
        self.betas[t - 1]
    }

    /// Cumulative product of (1 - beta) up to and including step t; by
    /// convention `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.t_max(), "alpha_bar index out of range");
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Key-value text serialization; enough to rebuild the exact schedule.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "T={}", self.t_max()).unwrap();
        writeln!(s, "kind={}", self.kind.as_str()).unwrap();
        writeln!(s, "beta_min={:e}", self.beta_min).unwrap();
        writeln!(s, "beta_max={:e}", self.beta_max).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DiffusionError> {
        let mut t = None;
        let mut kind = None;
        let mut beta_min = None;
        let mut beta_max = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                DiffusionError::InvalidSchedule(format!("bad schedule line {line:?}"))
            })?;
            match k {
                "T" => t = Some(v.parse::<usize>().map_err(|e| {
                    DiffusionError::InvalidSchedule(format!("bad T: {e}"))
                })?),
                "kind" => kind = Some(ScheduleKind::parse(v)?),
                "beta_min" => beta_min = Some(v.parse::<f64>().map_err(|e| {
                    DiffusionError::InvalidSchedule(format!("bad beta_min: {e}"))
                })?),
                "beta_max" => beta_max = Some(v.parse::<f64>().map_err(|e| {
                    DiffusionError::InvalidSchedule(format!("bad beta_max: {e}"))
                })?),
                other => {
                    return Err(DiffusionError::InvalidSchedule(format!(
                        "unknown schedule key {other:?}"
                    )))
                }
            }
        }
        let missing = |name: &str| DiffusionError::InvalidSchedule(format!("missing key {name}"));
        build_schedule(
            t.ok_or_else(|| missing("T"))?,
            kind.ok_or_else(|| missing("kind"))?,
            beta_min.ok_or_else(|| missing("beta_min"))?,
            beta_max.ok_or_else(|| missing("beta_max"))?,
        )
    }
}

/// Build a schedule of `t_max` steps. Linear interpolates beta_min..beta_max;
/// cosine follows the squared-cosine cumulative-alpha curve with betas
/// clamped into [beta_min, beta_max].
pub fn build_schedule(
    t_max: usize,
    kind: ScheduleKind,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if t_max == 0 {
        return Err(DiffusionError::InvalidSchedule("T must be >= 1".into()));
    }
    if !(beta_min > 0.0 && beta_min < 1.0 && beta_max > 0.0 && beta_max < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "beta bounds must lie in (0,1), got [{beta_min}, {beta_max}]"
        )));
    }
    if beta_min > beta_max {
        return Err(DiffusionError::InvalidSchedule(format!(
            "beta_min {beta_min} exceeds beta_max {beta_max}"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (0..t_max)
                .map(|i| {
                    let a0 = f(i as f64 / t_max as f64);
                    let a1 = f((i + 1) as f64 / t_max as f64);
                    (1.0 - a1 / a0).clamp(beta_min, beta_max)
                })
                .collect()
        }
    };
    let mut alpha_bars = Vec::with_capacity(t_max);
    let mut prod = 1.0;
    for &b in &betas {
        prod *= 1.0 - b;
        alpha_bars.push(prod);
    }
    let sched = NoiseSchedule { kind, beta_min, beta_max, betas, alpha_bars };
    validate(&sched)?;
    Ok(sched)
}

fn validate(s: &NoiseSchedule) -> Result<(), DiffusionError> {
    for (i, &b) in s.betas.iter().enumerate() {
        if !(b > 0.0 && b < 1.0) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "beta_{} = {b} outside (0,1)",
                i + 1
            )));
        }
        if i > 0 && b < s.betas[i - 1] {
            return Err(DiffusionError::InvalidSchedule(format!(
                "beta not monotonically non-decreasing at t={}",
                i + 1
            )));
        }
    }
    for (i, &a) in s.alpha_bars.iter().enumerate() {
        let prev = if i == 0 { 1.0 } else { s.alpha_bars[i - 1] };
        if !(a < prev) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "alpha_bar not strictly decreasing at t={}",
                i + 1
            )));
        }
    }
    Ok(())
}
