//! Diffusion operations on latent videos: closed-form forward noising,
//! reverse sampling parameterized by eta, clean-signal reconstruction from
//! predicted noise, and the noise-prediction loss.

use ndarray::{Array4, Ix4};

use idsprite_core::rng;

use crate::schedule::NoiseSchedule;
use crate::DiffusionError;

/// How a latent video was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    EncodedFromVideo,
    Sampled,
    PredictedX0,
}

/// A latent video of shape [frames, channels, height, width]. All entries
/// are finite; construction enforces this.
#[derive(Debug, Clone)]
pub struct LatentVideo {
    data: Array4<f64>,
    provenance: Provenance,
}

impl LatentVideo {
    pub fn new(data: Array4<f64>, provenance: Provenance) -> Result<Self, DiffusionError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite(
                "latent video entries must be finite".into(),
            ));
        }
        Ok(Self { data, provenance })
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn shape4(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }
}

/// A materialized standard-normal draw plus the seed that produced it.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    data: Array4<f64>,
    seed: u64,
}

impl NoiseDraw {
    /// Standard-normal draw from the deterministic stream keyed by
    /// (seed, label, indices).
    pub fn standard(seed: u64, label: &str, indices: &[u64], shape: [usize; 4]) -> Self {
        let mut r = rng::stream(seed, label, indices);
        let data = rng::normal(&mut r, &shape)
            .into_dimensionality::<Ix4>()
            .expect("4-d shape");
        Self { data, seed }
    }

    /// All-zeros draw; useful wherever the noise term must vanish.
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { data: Array4::zeros(shape), seed: 0 }
    }

    pub fn from_parts(data: Array4<f64>, seed: u64) -> Self {
        Self { data, seed }
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn check_t(t: usize, sched: &NoiseSchedule) -> Result<(), DiffusionError> {
    if t < 1 || t > sched.t_max() {
        return Err(DiffusionError::TimestepOutOfRange { t, t_max: sched.t_max() });
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<(), DiffusionError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(DiffusionError::InvalidEta(eta));
    }
    Ok(())
}

fn check_same_shape(a: &[usize], b: &[usize], what: &str) -> Result<(), DiffusionError> {
    if a != b {
        return Err(DiffusionError::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Noising step: z_t = sqrt(alpha_bar_t) * z + sqrt(1 - alpha_bar_t) * eps.
pub fn forward_diffuse(
    z_video: &LatentVideo,
    t: usize,
    eps: &NoiseDraw,
    sched: &NoiseSchedule,
) -> Result<LatentVideo, DiffusionError> {
    check_t(t, sched)?;
    check_same_shape(z_video.data().shape(), eps.data().shape(), "noise draw vs latent")?;
    let a = sched.alpha_bar(t);
    let z_t = z_video.data() * a.sqrt() + eps.data() * (1.0 - a).sqrt();
    LatentVideo::new(z_t, Provenance::Sampled)
}

/// Clean-signal reconstruction:
/// z_pred = (z_t - sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_bar_t).
pub fn predict_x0(
    z_t: &LatentVideo,
    eps_pred: &Array4<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentVideo, DiffusionError> {
    check_t(t, sched)?;
    check_same_shape(z_t.data().shape(), eps_pred.shape(), "predicted noise vs latent")?;
    let a = sched.alpha_bar(t);
    if a <= 1e-12 {
        return Err(DiffusionError::DegenerateTimestep(t));
    }
    let z0 = (z_t.data() - &(eps_pred * (1.0 - a).sqrt())) / a.sqrt();
    LatentVideo::new(z0, Provenance::PredictedX0)
}

/// Noise scale for one reverse step:
/// sigma_t = eta * sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)) * sqrt(beta_t).
pub fn sigma(t: usize, eta: f64, sched: &NoiseSchedule) -> Result<f64, DiffusionError> {
    check_eta(eta)?;
    check_t(t, sched)?;
    let a_prev = sched.alpha_bar(t - 1);
    let a_t = sched.alpha_bar(t);
    Ok(eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * sched.beta(t).sqrt())
}

/// Noise scale for a strided reverse step from t_hi down to t_lo. At stride
/// one this is exactly `sigma` (the effective one-step beta
/// 1 - alpha_bar_hi / alpha_bar_lo reduces to beta_t, and we use beta_t
/// directly so the reduction is bitwise).
pub fn sigma_between(
    t_hi: usize,
    t_lo: usize,
    eta: f64,
    sched: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    check_eta(eta)?;
    check_t(t_hi, sched)?;
    if t_lo >= t_hi {
        return Err(DiffusionError::InvalidStride { t_hi, t_lo });
    }
    let a_hi = sched.alpha_bar(t_hi);
    let a_lo = sched.alpha_bar(t_lo);
    let effective_beta = if t_lo + 1 == t_hi {
        sched.beta(t_hi)
    } else {
        1.0 - a_hi / a_lo
    };
    Ok(eta * ((1.0 - a_lo) / (1.0 - a_hi)).sqrt() * effective_beta.sqrt())
}

/// One reverse step from t to t-1:
/// z_{t-1} = (z_t - sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(1 - beta_t)
///           + sqrt(1 - alpha_bar_{t-1} - sigma_t^2) * eps_pred
///           + sigma_t * noise.
/// At eta = 0 the noise argument is ignored.
pub fn reverse_step(
    z_t: &LatentVideo,
    t: usize,
    eps_pred: &Array4<f64>,
    eta: f64,
    sched: &NoiseSchedule,
    noise: &NoiseDraw,
) -> Result<LatentVideo, DiffusionError> {
    check_t(t, sched)?;
    reverse_step_between(z_t, t, t - 1, eps_pred, eta, sched, noise)
}

/// Strided reverse step from t_hi down to t_lo (t_lo = 0 lands on the clean
/// sample). Reduces bitwise to `reverse_step` at stride one, where the
/// signal coefficient sqrt(alpha_bar_lo / alpha_bar_hi) is computed as
/// 1 / sqrt(1 - beta_t).
pub fn reverse_step_between(
    z_hi: &LatentVideo,
    t_hi: usize,
    t_lo: usize,
    eps_pred: &Array4<f64>,
    eta: f64,
    sched: &NoiseSchedule,
    noise: &NoiseDraw,
) -> Result<LatentVideo, DiffusionError> {
    check_same_shape(z_hi.data().shape(), eps_pred.shape(), "predicted noise vs latent")?;
    let sig = sigma_between(t_hi, t_lo, eta, sched)?;
    let a_hi = sched.alpha_bar(t_hi);
    let a_lo = sched.alpha_bar(t_lo);
    let dir_sq = 1.0 - a_lo - sig * sig;
    let dir = if dir_sq >= 0.0 {
        dir_sq.sqrt()
    } else if dir_sq > -1e-12 {
        0.0
    } else {
        return Err(DiffusionError::InvalidSigma(dir_sq));
    };
    let signal_coeff = if t_lo + 1 == t_hi {
        1.0 / (1.0 - sched.beta(t_hi)).sqrt()
    } else {
        (a_lo / a_hi).sqrt()
    };
    let mut z = (z_hi.data() - &(eps_pred * (1.0 - a_hi).sqrt())) * signal_coeff
        + &(eps_pred * dir);
    if sig > 0.0 {
        check_same_shape(z_hi.data().shape(), noise.data().shape(), "noise draw vs latent")?;
        z = z + &(noise.data() * sig);
    }
    LatentVideo::new(z, Provenance::Sampled)
}

/// Mean squared error between the true noise and the model's prediction.
pub fn ddpm_loss(eps_true: &NoiseDraw, eps_pred: &Array4<f64>) -> Result<f64, DiffusionError> {
    check_same_shape(eps_true.data().shape(), eps_pred.shape(), "noise pair")?;
    let n = eps_pred.len() as f64;
    let sum: f64 = eps_true
        .data()
        .iter()
        .zip(eps_pred.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// Generic sampling loop: start from seeded Gaussian noise and walk an
/// evenly spaced timestep grid from T down to 0, querying `eps_fn` for the
/// predicted noise at each visited step. With steps = T the grid is every
/// timestep; fewer steps stride through the schedule. Fully reproducible
/// from the seed at any eta.
pub fn sample_loop_with<E>(
    sched: &NoiseSchedule,
    shape: [usize; 4],
    steps: usize,
    eta: f64,
    seed: u64,
    mut eps_fn: E,
) -> Result<LatentVideo, DiffusionError>
where
    E: FnMut(&LatentVideo, usize) -> Array4<f64>,
{
    if steps == 0 || steps > sched.t_max() {
        return Err(DiffusionError::TooManySteps { steps, t_max: sched.t_max() });
    }
    let ts: Vec<usize> = (1..=steps).map(|i| i * sched.t_max() / steps).collect();
    let init = NoiseDraw::standard(seed, "sample/init", &[], shape);
    let mut z = LatentVideo::new(init.data().clone(), Provenance::Sampled)?;
    for k in (0..steps).rev() {
        let t_hi = ts[k];
        let t_lo = if k == 0 { 0 } else { ts[k - 1] };
        let noise = NoiseDraw::standard(seed, "sample/noise", &[t_hi as u64], shape);
        let eps = eps_fn(&z, t_hi);
        z = reverse_step_between(&z, t_hi, t_lo, &eps, eta, sched, &noise)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, ScheduleKind};
    use approx::assert_relative_eq;

    fn uniform_sched() -> NoiseSchedule {
        build_schedule(10, ScheduleKind::Linear, 0.1, 0.1).unwrap()
    }

    fn video(seed: u64) -> LatentVideo {
        let draw = NoiseDraw::standard(seed, "test/video", &[], [2, 2, 4, 4]);
        LatentVideo::new(draw.data().clone(), Provenance::EncodedFromVideo).unwrap()
    }

    #[test]
    fn zero_noise_scales_signal_exactly() {
        let sched = uniform_sched();
        let z0 = video(1);
        let eps = NoiseDraw::zeros([2, 2, 4, 4]);
        let z3 = forward_diffuse(&z0, 3, &eps, &sched).unwrap();
        let expected = z0.data() * 0.729f64.sqrt();
        assert_eq!(z3.data(), &expected);
    }

    #[test]
    fn pure_noise_at_t3_has_frozen_amplitude() {
        let sched = uniform_sched();
        let z0 = LatentVideo::new(Array4::zeros([1, 1, 2, 2]), Provenance::EncodedFromVideo)
            .unwrap();
        let eps = NoiseDraw::from_parts(Array4::ones([1, 1, 2, 2]), 0);
        let z3 = forward_diffuse(&z0, 3, &eps, &sched).unwrap();
        for &v in z3.data() {
            assert_relative_eq!(v, 0.520_576_603_392_814_8, max_relative = 1e-12);
            assert_relative_eq!(v, (1.0 - 0.729f64).sqrt(), max_relative = 1e-15);
        }
    }

    #[test]
    fn near_zero_beta_is_the_identity_on_the_signal() {
        let sched = build_schedule(1, ScheduleKind::Linear, 1e-8, 1e-8).unwrap();
        let z0 = video(2);
        let eps = NoiseDraw::zeros([2, 2, 4, 4]);
        let z1 = forward_diffuse(&z0, 1, &eps, &sched).unwrap();
        let max_err = z0
            .data()
            .iter()
            .zip(z1.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1e-6, "max_err = {max_err}");
    }

    #[test]
    fn exact_noise_inverts_to_the_original_signal() {
        let sched = uniform_sched();
        let z0 = video(3);
        let eps = NoiseDraw::standard(3, "test/eps", &[], [2, 2, 4, 4]);
        let z7 = forward_diffuse(&z0, 7, &eps, &sched).unwrap();
        let z_pred = predict_x0(&z7, eps.data(), 7, &sched).unwrap();
        assert_eq!(z_pred.provenance(), Provenance::PredictedX0);
        let num = z_pred
            .data()
            .iter()
            .zip(z0.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let den = z0.data().iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(num / den <= 1e-5);
    }

    #[test]
    fn pure_noise_latent_reconstructs_to_zero() {
        let sched = uniform_sched();
        let eps = NoiseDraw::standard(4, "test/eps", &[], [1, 2, 3, 3]);
        let a = sched.alpha_bar(5);
        let z_t = LatentVideo::new(eps.data() * (1.0 - a).sqrt(), Provenance::Sampled).unwrap();
        let z_pred = predict_x0(&z_t, eps.data(), 5, &sched).unwrap();
        for &v in z_pred.data() {
            assert!(v.abs() <= 1e-12);
        }
    }

    #[test]
    fn reconstruction_rejects_vanished_signal() {
        // alpha_bar_5 = 0.001^5 = 1e-15, far below the degeneracy threshold
        let sched = build_schedule(5, ScheduleKind::Linear, 0.999, 0.999).unwrap();
        let z_t = video(4);
        let eps = Array4::zeros([2, 2, 4, 4]);
        match predict_x0(&z_t, &eps, 5, &sched) {
            Err(DiffusionError::DegenerateTimestep(5)) => {}
            other => panic!("expected degenerate-timestep error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_tight_over_one_hundred_seeds() {
        let sched = build_schedule(50, ScheduleKind::Linear, 1e-4, 0.02).unwrap();
        let mut worst = 0.0f64;
        for s in 0..100u64 {
            let z0 = video(1000 + s);
            let eps = NoiseDraw::standard(s, "test/eps", &[], [2, 2, 4, 4]);
            let t = 1 + (s as usize * 7) % 50;
            let z_t = forward_diffuse(&z0, t, &eps, &sched).unwrap();
            let z_pred = predict_x0(&z_t, eps.data(), t, &sched).unwrap();
            let num = z_pred
                .data()
                .iter()
                .zip(z0.data().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let den = z0.data().iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            worst = worst.max(num / den);
        }
        assert!(worst <= 1e-5, "worst relative error = {worst:e}");
    }

    #[test]
    fn sigma_values_match_hand_evaluation() {
        let sched = uniform_sched();
        // eta=1, t=3: sqrt((1-0.81)/(1-0.729)) * sqrt(0.1)
        let s3 = sigma(3, 1.0, &sched).unwrap();
        assert_relative_eq!(s3, 0.264_784_253_887_974, max_relative = 1e-12);
        let recomputed = ((1.0 - 0.81f64) / (1.0 - 0.729)).sqrt() * 0.1f64.sqrt();
        assert_relative_eq!(s3, recomputed, max_relative = 1e-15);
        // linear in eta, zero floor, and zero at t=1 where alpha_bar_0 = 1
        assert_eq!(sigma(3, 0.0, &sched).unwrap(), 0.0);
        assert_eq!(sigma(3, 0.5, &sched).unwrap(), 0.5 * s3);
        assert_relative_eq!(sigma(3, 0.3, &sched).unwrap(), 0.3 * s3, max_relative = 1e-15);
        assert_eq!(sigma(1, 1.0, &sched).unwrap(), 0.0);
    }

    #[test]
    fn stride_one_noise_scale_matches_single_step_bitwise() {
        let sched = uniform_sched();
        for t in 1..=10 {
            for &eta in &[0.0, 0.3, 1.0] {
                let a = sigma(t, eta, &sched).unwrap();
                let b = sigma_between(t, t - 1, eta, &sched).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn deterministic_branch_ignores_the_noise_argument() {
        let sched = uniform_sched();
        let z5 = video(5);
        let eps = NoiseDraw::standard(5, "test/eps", &[], [2, 2, 4, 4]);
        let noise_a = NoiseDraw::standard(6, "test/noise", &[0], [2, 2, 4, 4]);
        let noise_b = NoiseDraw::standard(6, "test/noise", &[1], [2, 2, 4, 4]);
        let out_a = reverse_step(&z5, 5, eps.data(), 0.0, &sched, &noise_a).unwrap();
        let out_b = reverse_step(&z5, 5, eps.data(), 0.0, &sched, &noise_b).unwrap();
        assert_eq!(out_a.data(), out_b.data());
    }

    #[test]
    fn stochastic_branch_injects_scaled_noise() {
        let sched = uniform_sched();
        let z3 = video(7);
        let eps = NoiseDraw::standard(7, "test/eps", &[], [2, 2, 4, 4]);
        let noise = NoiseDraw::standard(8, "test/noise", &[], [2, 2, 4, 4]);
        let quiet = reverse_step(&z3, 3, eps.data(), 1.0, &sched, &NoiseDraw::zeros([2, 2, 4, 4]))
            .unwrap();
        let loud = reverse_step(&z3, 3, eps.data(), 1.0, &sched, &noise).unwrap();
        let s3 = sigma(3, 1.0, &sched).unwrap();
        for ((a, b), n) in loud.data().iter().zip(quiet.data().iter()).zip(noise.data().iter()) {
            assert_relative_eq!(a - b, s3 * n, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn full_deterministic_reverse_loop_reconstructs_the_signal() {
        let sched = uniform_sched();
        let z0 = video(9);
        let eps = NoiseDraw::standard(9, "test/eps", &[], [2, 2, 4, 4]);
        let zeros = NoiseDraw::zeros([2, 2, 4, 4]);
        let mut z = forward_diffuse(&z0, 10, &eps, &sched).unwrap();
        for t in (1..=10).rev() {
            z = reverse_step(&z, t, eps.data(), 0.0, &sched, &zeros).unwrap();
        }
        let max_err = z
            .data()
            .iter()
            .zip(z0.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1e-4, "max_err = {max_err:e}");
    }

    #[test]
    fn strided_step_at_stride_one_matches_single_step_bitwise() {
        let sched = uniform_sched();
        let z = video(10);
        let eps = NoiseDraw::standard(10, "test/eps", &[], [2, 2, 4, 4]);
        let noise = NoiseDraw::standard(11, "test/noise", &[], [2, 2, 4, 4]);
        for t in 1..=10 {
            for &eta in &[0.0, 1.0] {
                let a = reverse_step(&z, t, eps.data(), eta, &sched, &noise).unwrap();
                let b = reverse_step_between(&z, t, t - 1, eps.data(), eta, &sched, &noise)
                    .unwrap();
                assert_eq!(a.data(), b.data());
            }
        }
    }

    #[test]
    fn sampling_loop_is_bit_reproducible_at_both_eta_extremes() {
        let sched = uniform_sched();
        let model = |z: &LatentVideo, _t: usize| z.data() * 0.1;
        for &eta in &[0.0, 1.0] {
            let a = sample_loop_with(&sched, [1, 2, 4, 4], 10, eta, 42, model).unwrap();
            let b = sample_loop_with(&sched, [1, 2, 4, 4], 10, eta, 42, model).unwrap();
            assert_eq!(a.data(), b.data());
            assert!(a.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn strided_sampling_visits_fewer_steps_and_stays_finite() {
        let sched = uniform_sched();
        let mut visited = Vec::new();
        let out = sample_loop_with(&sched, [1, 1, 2, 2], 3, 1.0, 7, |z, t| {
            visited.push(t);
            z.data() * 0.05
        })
        .unwrap();
        assert_eq!(visited, vec![10, 6, 3]);
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert_eq!(out.shape4(), [1, 1, 2, 2]);
    }

    #[test]
    fn sampling_loop_rejects_bad_step_counts() {
        let sched = uniform_sched();
        let model = |z: &LatentVideo, _t: usize| z.data() * 0.0;
        assert!(matches!(
            sample_loop_with(&sched, [1, 1, 2, 2], 11, 0.0, 0, model),
            Err(DiffusionError::TooManySteps { steps: 11, t_max: 10 })
        ));
        assert!(matches!(
            sample_loop_with(&sched, [1, 1, 2, 2], 0, 0.0, 0, model),
            Err(DiffusionError::TooManySteps { steps: 0, .. })
        ));
    }

    #[test]
    fn noised_zero_signal_has_the_scheduled_variance() {
        let sched = uniform_sched();
        let z0 = LatentVideo::new(Array4::zeros([1, 1, 2, 2]), Provenance::EncodedFromVideo)
            .unwrap();
        let mut values = Vec::with_capacity(40_000);
        for i in 0..10_000u64 {
            let eps = NoiseDraw::standard(123, "test/var", &[i], [1, 1, 2, 2]);
            let z3 = forward_diffuse(&z0, 3, &eps, &sched).unwrap();
            values.extend(z3.data().iter().copied());
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = 1.0 - 0.729;
        assert!(
            (var - expected).abs() / expected <= 0.05,
            "empirical variance {var} vs expected {expected}"
        );
    }

    #[test]
    fn loss_matches_a_brute_force_oracle() {
        let shape = [2, 1, 3, 3];
        let a = NoiseDraw::standard(1, "test/a", &[], shape);
        let b = NoiseDraw::standard(2, "test/b", &[], shape);
        assert_eq!(ddpm_loss(&a, a.data()).unwrap(), 0.0);
        let zeros = NoiseDraw::zeros(shape);
        assert_eq!(ddpm_loss(&zeros, &Array4::ones(shape)).unwrap(), 1.0);
        let mut acc = 0.0;
        let mut count = 0.0;
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            acc += (x - y).powi(2);
            count += 1.0;
        }
        let loss = ddpm_loss(&a, b.data()).unwrap();
        assert_relative_eq!(loss, acc / count, max_relative = 1e-10);
        let short = NoiseDraw::zeros([1, 1, 3, 3]);
        assert!(matches!(
            ddpm_loss(&short, a.data()),
            Err(DiffusionError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn argument_validation_covers_the_error_surface() {
        let sched = uniform_sched();
        let z = video(12);
        let eps = Array4::zeros([2, 2, 4, 4]);
        let noise = NoiseDraw::zeros([2, 2, 4, 4]);
        assert!(matches!(
            forward_diffuse(&z, 11, &NoiseDraw::zeros([2, 2, 4, 4]), &sched),
            Err(DiffusionError::TimestepOutOfRange { t: 11, t_max: 10 })
        ));
        assert!(matches!(
            forward_diffuse(&z, 3, &NoiseDraw::zeros([1, 2, 4, 4]), &sched),
            Err(DiffusionError::ShapeMismatch(_))
        ));
        assert!(matches!(
            reverse_step(&z, 3, &eps, 1.5, &sched, &noise),
            Err(DiffusionError::InvalidEta(_))
        ));
        assert!(matches!(
            reverse_step(&z, 3, &eps, f64::NAN, &sched, &noise),
            Err(DiffusionError::InvalidEta(_))
        ));
        assert!(matches!(
            sigma_between(3, 3, 1.0, &sched),
            Err(DiffusionError::InvalidStride { t_hi: 3, t_lo: 3 })
        ));
        let bad = Array4::from_elem([1, 1, 1, 1], f64::NAN);
        assert!(matches!(
            LatentVideo::new(bad, Provenance::Sampled),
            Err(DiffusionError::NonFinite(_))
        ));
    }
}
