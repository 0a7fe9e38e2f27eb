//! Forward-noise schedule and DDIM stride.
//!
//! Timesteps are 0-based: `t = 0` is the least noisy level and `t = T - 1`
//! the noisiest. `alpha_t` is the cumulative signal coefficient of the
//! variance-preserving forward process `x_t = sqrt(alpha_t) x_0 +
//! sqrt(1 - alpha_t) eps`, and `sigma_t^2 = (1 - alpha_t) / alpha_t` is the
//! noise-to-signal ratio that scales the denoiser logits.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sample_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: DEFAULT_T,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            sample_steps: DEFAULT_STEPS,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear_beta(self.timesteps, self.beta_min, self.beta_max, self.sample_steps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    alphas: Vec<f64>,
    sigmas_sq: Vec<f64>,
    g_values: Vec<f64>,
    ddim_steps: Vec<usize>,
    log_sigma_lo: f64,
    log_sigma_hi: f64,
}

fn strided_steps(t_len: usize, n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![t_len - 1];
    }
    (0..n).map(|i| (n - 1 - i) * (t_len - 1) / (n - 1)).collect()
}

impl DiffusionSchedule {
    /// DDPM schedule with `beta` linearly spaced on `[beta_min, beta_max]`
    /// and `n_sample_steps` uniformly strided DDIM steps running from the
    /// noisiest step down to `t = 0`.
    pub fn linear_beta(t_len: usize, beta_min: f64, beta_max: f64, n_sample_steps: usize) -> Result<Self> {
        if t_len == 0 || n_sample_steps == 0 || n_sample_steps > t_len {
            return Err(Error::Argument(format!(
                "need T >= sample steps >= 1, got T = {t_len}, steps = {n_sample_steps}"
            )));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Argument(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let mut alphas = Vec::with_capacity(t_len);
        let mut prod = 1.0;
        for s in 0..t_len {
            let beta = if t_len == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * s as f64 / (t_len - 1) as f64
            };
            prod *= 1.0 - beta;
            alphas.push(prod);
        }
        Self::from_alphas(alphas, strided_steps(t_len, n_sample_steps))
    }

    /// Schedule from explicit cumulative alphas (strictly decreasing, in
    /// `(0, 1)`) and a strictly decreasing stride.
    pub fn from_alphas(alphas: Vec<f64>, ddim_steps: Vec<usize>) -> Result<Self> {
        if alphas.is_empty() || ddim_steps.is_empty() {
            return Err(Error::Argument("empty schedule".into()));
        }
        if alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Argument("alphas must lie in (0, 1)".into()));
        }
        if alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Argument("alphas must be strictly decreasing".into()));
        }
        if ddim_steps.windows(2).any(|w| w[1] >= w[0]) || ddim_steps[0] >= alphas.len() {
            return Err(Error::Argument("stride must be strictly decreasing valid indices".into()));
        }
        let sigmas_sq: Vec<f64> = alphas.iter().map(|&a| (1.0 - a) / a).collect();
        let log_sigma = |t: usize| 0.5 * sigmas_sq[t].ln();
        let log_sigma_lo = ddim_steps.iter().map(|&t| log_sigma(t)).fold(f64::INFINITY, f64::min);
        let log_sigma_hi = ddim_steps.iter().map(|&t| log_sigma(t)).fold(f64::NEG_INFINITY, f64::max);
        let mut schedule = Self {
            alphas,
            sigmas_sq,
            g_values: Vec::new(),
            ddim_steps,
            log_sigma_lo,
            log_sigma_hi,
        };
        schedule.g_values = schedule
            .sigmas_sq
            .iter()
            .map(|s2| schedule.g_of_sigma(s2.sqrt()))
            .collect();
        Ok(schedule)
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn sigma_sq(&self, t: usize) -> f64 {
        self.sigmas_sq[t]
    }

    pub fn sigmas_sq(&self) -> &[f64] {
        &self.sigmas_sq
    }

    /// Normalized noise level of step `t`.
    pub fn g(&self, t: usize) -> f64 {
        self.g_values[t]
    }

    pub fn g_values(&self) -> &[f64] {
        &self.g_values
    }

    pub fn ddim_steps(&self) -> &[usize] {
        &self.ddim_steps
    }

    /// True when the stride spans a single noise level, in which case `g`
    /// is identically 0.
    pub fn is_degenerate(&self) -> bool {
        self.log_sigma_hi <= self.log_sigma_lo
    }

    /// Position of `sigma` between the least and most noisy stride steps,
    /// measured on a log scale and clamped to `[0, 1]`.
    pub fn g_of_sigma(&self, sigma: f64) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        ((sigma.ln() - self.log_sigma_lo) / (self.log_sigma_hi - self.log_sigma_lo)).clamp(0.0, 1.0)
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::Argument(format!("timestep {t} out of range 0..{}", self.len())));
        }
        Ok(())
    }

    /// `sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps`.
    pub fn forward_noise(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(t)?;
        forward_noise_alpha(x0, self.alphas[t], eps)
    }
}

/// Forward process at an explicit signal coefficient `alpha` in `(0, 1]`.
pub fn forward_noise_alpha(x0: &[f64], alpha: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_dim("noise vector", x0.len(), eps.len())?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Argument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let (sa, sn) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream_rng};

    #[test]
    fn single_step_schedule() {
        let s = DiffusionSchedule::linear_beta(1, 0.1, 0.1, 1).unwrap();
        assert_eq!(s.alpha(0), 0.9);
        assert!((s.sigma_sq(0) - 1.0 / 9.0).abs() < 1e-15);
        assert!(s.is_degenerate());
        assert_eq!(s.g_of_sigma(3.0), 0.0);
    }

    #[test]
    fn default_schedule_shape() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.ddim_steps(), &[999, 888, 777, 666, 555, 444, 333, 222, 111, 0]);
        assert!(s.alphas().windows(2).all(|w| w[1] < w[0]));
        assert!(s.sigmas_sq().windows(2).all(|w| w[1] > w[0]));
        assert!((s.alpha(0) - (1.0 - 1e-4)).abs() < 1e-15);
        for t in 0..s.len() {
            let a = s.alpha(t);
            assert_eq!(s.sigma_sq(t), (1.0 - a) / a);
        }
        assert_eq!(s.g(999), 1.0);
        assert_eq!(s.g(0), 0.0);
    }

    #[test]
    fn invalid_ranges() {
        assert!(DiffusionSchedule::linear_beta(5, 1e-4, 0.02, 6).is_err());
        assert!(DiffusionSchedule::linear_beta(5, 0.0, 0.02, 2).is_err());
        assert!(DiffusionSchedule::linear_beta(5, 0.03, 0.02, 2).is_err());
        assert!(DiffusionSchedule::linear_beta(5, 1e-4, 1.0, 2).is_err());
        assert!(DiffusionSchedule::linear_beta(0, 1e-4, 0.02, 0).is_err());
    }

    #[test]
    fn g_endpoints_and_midpoint() {
        let s = ScheduleConfig::default().build().unwrap();
        let lo = s.sigma_sq(0).sqrt();
        let hi = s.sigma_sq(999).sqrt();
        assert_eq!(s.g_of_sigma(hi), 1.0);
        assert_eq!(s.g_of_sigma(lo), 0.0);
        assert!((s.g_of_sigma((lo * hi).sqrt()) - 0.5).abs() < 1e-12);
        assert_eq!(s.g_of_sigma(hi * 10.0), 1.0);
        assert_eq!(s.g_of_sigma(lo / 10.0), 0.0);
    }

    #[test]
    fn forward_noise_cases() {
        let s = ScheduleConfig::default().build().unwrap();
        let x0 = vec![0.5, -1.0, 2.0];
        let a = s.alpha(300);
        let out = s.forward_noise(&x0, 300, &[0.0; 3]).unwrap();
        for (o, x) in out.iter().zip(&x0) {
            assert_eq!(*o, a.sqrt() * x);
        }
        assert_eq!(forward_noise_alpha(&x0, 1.0, &[3.0, 3.0, 3.0]).unwrap(), x0);
        let e = vec![1.0, -2.0, 0.25];
        let half = forward_noise_alpha(&[0.0; 3], 0.5, &e).unwrap();
        for (h, v) in half.iter().zip(&e) {
            assert!((h - v / 2f64.sqrt()).abs() < 1e-15);
        }
        assert!(s.forward_noise(&x0, 0, &[0.0; 2]).is_err());
        assert!(s.forward_noise(&x0, 1000, &[0.0; 3]).is_err());
    }

    #[test]
    fn forward_noise_variance() {
        let s = ScheduleConfig::default().build().unwrap();
        let t = 500;
        let mut rng = stream_rng(11, 0);
        let draws = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let eps = standard_normal_vec(&mut rng, 1);
            let x = s.forward_noise(&[0.0], t, &eps).unwrap()[0];
            sum += x;
            sum_sq += x * x;
        }
        let n = draws as f64;
        let var = sum_sq / n - (sum / n).powi(2);
        let expected = 1.0 - s.alpha(t);
        // standard error of a Gaussian sample variance is var * sqrt(2 / n)
        let se = expected * (2.0 / n).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "var {var} expected {expected}");
    }
}
