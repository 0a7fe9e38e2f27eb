//! Reverse diffusion with the analytical denoiser.
//!
//! Each stride step predicts `x0_hat` and moves to the next stride step with
//! the DDIM update in x0-parameterization:
//!
//! ```text
//! eps_hat = (x_t - sqrt(a_t) x0_hat) / sqrt(1 - a_t)
//! x_next  = sqrt(a_next) x0_hat + sqrt(1 - a_next - s^2) eps_hat + s z
//! s       = eta sqrt((1 - a_next) / (1 - a_t)) sqrt(1 - a_t / a_next)
//! ```
//!
//! The last stride step returns `x0_hat` itself (`a_0 = 1`).

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{certify_step, AuditMode, BoundDiagnostics};
use crate::dataset::DatasetStore;
use crate::denoiser::{posterior, weighted_stream, Support, WeightSummary, DEFAULT_WSS_BATCH};
use crate::error::{check_dim, Error, Result};
use crate::rng::{standard_normal_vec, stream_rng};
use crate::schedule::DiffusionSchedule;
use crate::selection::{scaled_query, select, GoldenSelection, ScheduleParams, SelectionSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Proxy screen, exact top-k, streaming softmax over the golden set.
    Golden,
    /// Streaming softmax over the whole store.
    FullScan,
    /// Golden selection aggregated with the batch-averaged softmax.
    WssAblation,
}

impl SamplerMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplerMode::Golden => "golden",
            SamplerMode::FullScan => "full",
            SamplerMode::WssAblation => "wss",
        }
    }
}

impl std::str::FromStr for SamplerMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "golden" => Ok(SamplerMode::Golden),
            "full" | "full_scan" => Ok(SamplerMode::FullScan),
            "wss" | "wss_ablation" => Ok(SamplerMode::WssAblation),
            _ => Err(format!("unknown mode {s:?} (expected golden, full or wss)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub eta: f64,
    pub mode: SamplerMode,
    /// `None` means the defaults for the store size.
    pub schedule_params: Option<ScheduleParams>,
    /// Audit every `audit_every`-th step; 0 disables audits.
    pub audit_every: usize,
    pub seed: u64,
    pub wss_batch: usize,
    pub record_timing: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: crate::schedule::DEFAULT_STEPS,
            eta: 0.0,
            mode: SamplerMode::Golden,
            schedule_params: None,
            audit_every: 0,
            seed: 0,
            wss_batch: DEFAULT_WSS_BATCH,
            record_timing: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    /// Position in the stride, starting at 0.
    pub step: usize,
    pub t: usize,
    pub g: f64,
    pub x_t: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub m_t: usize,
    pub k_t: usize,
    pub weights: Option<WeightSummary>,
    pub selection: Option<SelectionSummary>,
    pub audit: Option<BoundDiagnostics>,
    pub step_time: Option<Duration>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub seed: u64,
    pub initial_noise: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub sample: Vec<f64>,
}

/// Denoised estimate for one step in the configured mode.
pub(crate) struct StepEstimate {
    pub x0_hat: Vec<f64>,
    pub weights: Option<WeightSummary>,
    pub selection: Option<GoldenSelection>,
    pub m_t: usize,
    pub k_t: usize,
}

pub(crate) fn estimate(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    mode: SamplerMode,
    params: &ScheduleParams,
    wss_batch: usize,
    x_t: &[f64],
    t: usize,
) -> Result<StepEstimate> {
    let scaled = scaled_query(x_t, schedule.alpha(t));
    let sigma_sq = schedule.sigma_sq(t);
    match mode {
        SamplerMode::FullScan => {
            let r = posterior(store, &scaled, sigma_sq, Support::All)?.into_result();
            Ok(StepEstimate {
                x0_hat: r.x0_hat,
                weights: r.weights_summary,
                selection: None,
                m_t: store.len(),
                k_t: store.len(),
            })
        }
        SamplerMode::Golden | SamplerMode::WssAblation => {
            let sel = select(store, schedule, params, x_t, t)?;
            let r = if mode == SamplerMode::Golden {
                posterior(store, &scaled, sigma_sq, Support::Indices(&sel.golden))?.into_result()
            } else {
                weighted_stream(store, &scaled, sigma_sq, Support::Indices(&sel.golden), wss_batch)?
            };
            Ok(StepEstimate {
                x0_hat: r.x0_hat,
                weights: r.weights_summary,
                m_t: sel.m_t,
                k_t: sel.k_t,
                selection: Some(sel),
            })
        }
    }
}

fn ddim_update(
    x_t: &[f64],
    x0_hat: &[f64],
    alpha: f64,
    alpha_next: f64,
    eta: f64,
    noise: Option<&[f64]>,
) -> Vec<f64> {
    let eps_scale = 1.0 / (1.0 - alpha).sqrt();
    let sa = alpha.sqrt();
    let s = eta * ((1.0 - alpha_next) / (1.0 - alpha)).sqrt() * (1.0 - alpha / alpha_next).max(0.0).sqrt();
    let dir = (1.0 - alpha_next - s * s).max(0.0).sqrt();
    let san = alpha_next.sqrt();
    x_t.iter()
        .zip(x0_hat)
        .enumerate()
        .map(|(j, (x, x0))| {
            let eps = (x - sa * x0) * eps_scale;
            let z = noise.map_or(0.0, |n| n[j]);
            san * x0 + dir * eps + s * z
        })
        .collect()
}

fn resolve_params(store: &DatasetStore, schedule: &DiffusionSchedule, config: &SamplerConfig) -> Result<ScheduleParams> {
    let params = config
        .schedule_params
        .unwrap_or_else(|| ScheduleParams::defaults_for(store.len()));
    if config.mode != SamplerMode::FullScan {
        ScheduleParams::new(store.len(), params.m_min, params.m_max, params.k_min, params.k_max)?;
        params.validate_for(schedule)?;
        if store.proxy_cache().is_none() {
            return Err(Error::Precondition("golden selection needs a proxy cache".into()));
        }
    }
    Ok(params)
}

/// Run one reverse trajectory from `initial_noise` (or seeded noise).
pub fn sample(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    config: &SamplerConfig,
    initial_noise: Option<Vec<f64>>,
) -> Result<Trajectory> {
    let stride = schedule.ddim_steps();
    if config.n_steps != stride.len() {
        return Err(Error::Consistency(format!(
            "config asks for {} steps but the schedule stride has {}",
            config.n_steps,
            stride.len()
        )));
    }
    if !(0.0..=1.0).contains(&config.eta) {
        return Err(Error::Argument(format!("eta must lie in [0, 1], got {}", config.eta)));
    }
    if config.mode == SamplerMode::WssAblation && config.wss_batch == 0 {
        return Err(Error::Argument("WSS batch size must be >= 1".into()));
    }
    let params = resolve_params(store, schedule, config)?;
    let initial_noise = match initial_noise {
        Some(x) => {
            check_dim("initial noise", store.dim(), x.len())?;
            x
        }
        None => standard_normal_vec(&mut stream_rng(config.seed, 0), store.dim()),
    };
    let mut eta_rng = stream_rng(config.seed, 1);
    let mut x = initial_noise.clone();
    let mut steps = Vec::with_capacity(stride.len());
    for (step, &t) in stride.iter().enumerate() {
        let start = config.record_timing.then(Instant::now);
        let est = estimate(store, schedule, config.mode, &params, config.wss_batch, &x, t)?;
        let next = match stride.get(step + 1) {
            Some(&t_next) => {
                let noise = (config.eta > 0.0).then(|| standard_normal_vec(&mut eta_rng, store.dim()));
                ddim_update(&x, &est.x0_hat, schedule.alpha(t), schedule.alpha(t_next), config.eta, noise.as_deref())
            }
            None => est.x0_hat.clone(),
        };
        let step_time = start.map(|s| s.elapsed());
        if next.iter().chain(&est.x0_hat).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step, t });
        }
        let audit = if config.audit_every > 0 && step % config.audit_every == 0 {
            let sel = match &est.selection {
                Some(sel) => sel.clone(),
                None => GoldenSelection::everything(store, schedule, &x, t)?,
            };
            Some(certify_step(store, schedule, &x, t, &sel, AuditMode::Full)?)
        } else {
            None
        };
        steps.push(StepRecord {
            step,
            t,
            g: schedule.g(t),
            x_t: std::mem::replace(&mut x, next),
            x0_hat: est.x0_hat,
            m_t: est.m_t,
            k_t: est.k_t,
            weights: est.weights,
            selection: est.selection.as_ref().map(GoldenSelection::summary),
            audit,
            step_time,
        });
    }
    Ok(Trajectory { seed: config.seed, initial_noise, steps, sample: x })
}

/// `count` independent trajectories; trajectory `i` uses seed `seed + i`.
pub fn sample_batch(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    config: &SamplerConfig,
    count: usize,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let cfg = SamplerConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
            sample(store, schedule, &cfg, None)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub t: usize,
    pub entropy: f64,
    pub effective_support: f64,
    pub max_weight: f64,
    pub top_mass: f64,
    pub m_t: usize,
    pub k_t: usize,
    pub step_time_ms: Option<f64>,
}

/// Weight concentration per step.
pub fn denoise_trajectory_stats(traj: &Trajectory) -> Result<Vec<StepStats>> {
    traj.steps
        .iter()
        .map(|s| {
            let w = s
                .weights
                .as_ref()
                .ok_or_else(|| Error::Precondition(format!("step {} has no weight summary", s.step)))?;
            Ok(StepStats {
                step: s.step,
                t: s.t,
                entropy: w.entropy,
                effective_support: w.effective_support,
                max_weight: w.max_weight,
                top_mass: w.top_mass(),
                m_t: s.m_t,
                k_t: s.k_t,
                step_time_ms: s.step_time.map(|d| d.as_secs_f64() * 1e3),
            })
        })
        .collect()
}

/// Per-step mean wall time over a batch, when timing was recorded.
pub fn mean_step_time(trajectories: &[Trajectory]) -> Option<Duration> {
    let times: Vec<Duration> = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.step_time))
        .collect::<Option<Vec<_>>>()?;
    if times.is_empty() {
        return None;
    }
    Some(times.iter().sum::<Duration>() / times.len() as u32)
}

/// Median effective support across trajectories, per step.
pub fn median_effective_support(trajectories: &[Trajectory]) -> Result<Vec<f64>> {
    let stats: Vec<Vec<StepStats>> = trajectories.iter().map(denoise_trajectory_stats).collect::<Result<_>>()?;
    let n_steps = stats.first().map_or(0, Vec::len);
    Ok((0..n_steps)
        .map(|s| {
            let mut v: Vec<f64> = stats.iter().map(|st| st[s].effective_support).collect();
            crate::metrics::median(&mut v)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_moons;
    use crate::schedule::ScheduleConfig;

    fn setup(n: usize) -> (DatasetStore, DiffusionSchedule) {
        (
            make_moons(n, 0.05, 0).unwrap().with_proxy(4).unwrap(),
            ScheduleConfig::default().build().unwrap(),
        )
    }

    #[test]
    fn single_sample_dataset() {
        let store = DatasetStore::from_flat(vec![0.3, -0.6], 2, None, None).unwrap().with_proxy(4).unwrap();
        let schedule = ScheduleConfig::default().build().unwrap();
        for mode in [SamplerMode::Golden, SamplerMode::FullScan, SamplerMode::WssAblation] {
            let cfg = SamplerConfig { mode, seed: 4, ..Default::default() };
            let traj = sample(&store, &schedule, &cfg, None).unwrap();
            assert!(traj.steps.iter().all(|s| s.x0_hat == vec![0.3, -0.6]));
            assert_eq!(traj.sample, vec![0.3, -0.6]);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (store, schedule) = setup(400);
        let cfg = SamplerConfig { seed: 12, ..Default::default() };
        let a = sample(&store, &schedule, &cfg, None).unwrap();
        let b = sample(&store, &schedule, &cfg, None).unwrap();
        assert_eq!(a.sample, b.sample);
        assert!(a.steps.iter().zip(&b.steps).all(|(x, y)| x.x_t == y.x_t && x.x0_hat == y.x0_hat));
        assert_eq!(a.steps.len(), 10);
    }

    #[test]
    fn batch_matches_single_calls() {
        let (store, schedule) = setup(300);
        let cfg = SamplerConfig { seed: 100, ..Default::default() };
        let batch = sample_batch(&store, &schedule, &cfg, 3).unwrap();
        let single = sample(&store, &schedule, &SamplerConfig { seed: 102, ..cfg.clone() }, None).unwrap();
        assert_eq!(batch[2].sample, single.sample);
        assert_eq!(batch[0].seed, 100);
        assert!(sample_batch(&store, &schedule, &cfg, 0).is_err());
    }

    #[test]
    fn final_sample_within_radius() {
        let (store, schedule) = setup(500);
        let cfg = SamplerConfig { seed: 1, eta: 0.5, ..Default::default() };
        let traj = sample(&store, &schedule, &cfg, None).unwrap();
        let r = store.radius() * 1.05;
        assert!(traj.sample.iter().all(|v| v.is_finite() && v.abs() <= r));
    }

    #[test]
    fn full_scan_audit_is_zero_error() {
        let (store, schedule) = setup(200);
        let cfg = SamplerConfig { mode: SamplerMode::FullScan, audit_every: 1, seed: 3, ..Default::default() };
        let traj = sample(&store, &schedule, &cfg, None).unwrap();
        for s in &traj.steps {
            let d = s.audit.as_ref().unwrap();
            assert_eq!(d.actual_error, Some(0.0));
            let r = crate::denoiser::denoise_full(&store, &schedule, &s.x_t, s.t).unwrap();
            assert_eq!(r.x0_hat, s.x0_hat);
        }
    }

    #[test]
    fn misconfigurations() {
        let (store, schedule) = setup(100);
        let cfg = SamplerConfig { n_steps: 5, ..Default::default() };
        assert!(sample(&store, &schedule, &cfg, None).is_err());
        let cfg = SamplerConfig::default();
        assert!(sample(&store, &schedule, &cfg, Some(vec![0.0; 3])).is_err());
        let bare = make_moons(100, 0.05, 0).unwrap();
        assert!(matches!(sample(&bare, &schedule, &cfg, None), Err(Error::Precondition(_))));
        let cfg = SamplerConfig { eta: 2.0, ..Default::default() };
        assert!(sample(&store, &schedule, &cfg, None).is_err());
    }

    #[test]
    fn stats_require_weights() {
        let (store, schedule) = setup(100);
        let mut traj = sample(&store, &schedule, &SamplerConfig::default(), None).unwrap();
        let stats = denoise_trajectory_stats(&traj).unwrap();
        assert_eq!(stats.len(), 10);
        assert!(stats.iter().all(|s| s.effective_support >= 1.0 - 1e-12));
        traj.steps[3].weights = None;
        assert!(denoise_trajectory_stats(&traj).is_err());
    }
}
