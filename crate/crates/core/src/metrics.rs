//! Sample-set comparison and per-step performance measurement.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::DatasetStore;
use crate::denoiser::{posterior, Support};
use crate::error::{Error, Result};
use crate::rng::{standard_normal_vec, stream_rng};
use crate::sampler::{estimate, SamplerMode};
use crate::schedule::DiffusionSchedule;
use crate::selection::{scaled_query, ScheduleParams};

fn check_shapes(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Argument(format!("sample counts differ or are zero: {} vs {}", a.len(), b.len())));
    }
    if a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Argument("sample dimensions differ".into()));
    }
    Ok(())
}

/// Mean over samples and coordinates of squared differences.
pub fn mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_shapes(a, b)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.iter().zip(y) {
            sum += (u - v) * (u - v);
        }
        count += x.len();
    }
    Ok(sum / count as f64)
}

/// `1 - SS_res / SS_tot`, pooled over all coordinates, with `SS_tot` taken
/// about the mean of every reference coordinate.
pub fn r_squared(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    check_shapes(pred, reference)?;
    let count: usize = reference.iter().map(Vec::len).sum();
    let mean = reference.iter().flatten().sum::<f64>() / count as f64;
    let ss_tot: f64 = reference.iter().flatten().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Argument("r^2 is undefined for a constant reference".into()));
    }
    let ss_res: f64 = pred
        .iter()
        .flatten()
        .zip(reference.iter().flatten())
        .map(|(p, r)| (p - r).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub mse: f64,
    pub r2: f64,
    pub n: usize,
}

impl ComparisonReport {
    pub fn compare(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Self> {
        Ok(Self { mse: mse(pred, reference)?, r2: r_squared(pred, reference)?, n: pred.len() })
    }
}

/// Median of `values` (mean of the two middle values for even lengths).
/// Returns NaN for an empty slice.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_unstable_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Multiply-add counts of one denoising step.
///
/// The full scan costs `N D`; the golden pipeline costs `N d` for the proxy
/// screen plus `m_t D` for exact scoring inside the candidate pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FlopModel {
    pub full: u64,
    pub golden: u64,
}

impl FlopModel {
    pub fn new(n: usize, dim: usize, proxy_dim: usize, m_t: usize) -> Self {
        Self {
            full: (n * dim) as u64,
            golden: (n * proxy_dim + m_t * dim) as u64,
        }
    }

    pub fn for_mode(&self, mode: SamplerMode) -> u64 {
        match mode {
            SamplerMode::FullScan => self.full,
            SamplerMode::Golden | SamplerMode::WssAblation => self.golden,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.full as f64 / self.golden as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchConfig {
    pub warmup: usize,
    pub repeats: usize,
    /// Stride position to time; `None` picks the middle of the stride.
    pub stride_index: Option<usize>,
    pub params: Option<ScheduleParams>,
    pub seed: u64,
    pub wss_batch: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 3,
            repeats: 10,
            stride_index: None,
            params: None,
            seed: 0,
            wss_batch: crate::denoiser::DEFAULT_WSS_BATCH,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PerfReport {
    pub mode: SamplerMode,
    pub n: usize,
    pub dim: usize,
    pub proxy_dim: usize,
    pub t: usize,
    pub m_t: usize,
    pub k_t: usize,
    /// Median seconds per denoising step.
    pub step_time: f64,
    pub step_times: Vec<f64>,
    pub flops: u64,
    pub flop_model: FlopModel,
    pub peak_bytes: usize,
    pub threads: usize,
}

/// Analytic peak bytes for one step: store and proxy storage plus the
/// largest transient buffers of the pass.
pub fn peak_bytes_estimate(store: &DatasetStore, mode: SamplerMode, m_t: usize) -> usize {
    let f = std::mem::size_of::<f64>();
    let n = store.len();
    let dim = store.dim();
    let transient = match mode {
        // logits + one accumulator per shard + query copies
        SamplerMode::FullScan => n * f + n.div_ceil(crate::denoiser::SHARD_ROWS) * dim * f + 2 * dim * f,
        // (distance, index) pairs for the screen, candidate logits and
        // copies, golden logits, accumulator and query copies
        SamplerMode::Golden | SamplerMode::WssAblation => {
            n * (f + std::mem::size_of::<usize>()) + 4 * m_t * f + 4 * dim * f
        }
    };
    store.storage_bytes() + transient
}

/// Median wall time of one denoising step at a fixed noise level.
///
/// Queries are forward-noised training samples drawn from `config.seed`, so
/// every mode times exactly the same inputs.
pub fn time_denoise_step(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    mode: SamplerMode,
    config: &BenchConfig,
) -> Result<PerfReport> {
    if config.repeats == 0 {
        return Err(Error::Argument("at least one timed repetition is required".into()));
    }
    let stride = schedule.ddim_steps();
    let idx = config.stride_index.unwrap_or(stride.len() / 2);
    let t = *stride
        .get(idx)
        .ok_or_else(|| Error::Argument(format!("stride index {idx} out of range")))?;
    let params = config.params.unwrap_or_else(|| ScheduleParams::defaults_for(store.len()));
    if mode != SamplerMode::FullScan && store.proxy_cache().is_none() {
        return Err(Error::Precondition("golden selection needs a proxy cache".into()));
    }
    let mut rng = stream_rng(config.seed, 0x6265_6e63);
    let queries: Vec<Vec<f64>> = (0..config.repeats)
        .map(|r| {
            let x0 = store.sample((r * 7919 + config.seed as usize) % store.len()).to_vec();
            let eps = standard_normal_vec(&mut rng, store.dim());
            schedule.forward_noise(&x0, t, &eps)
        })
        .collect::<Result<_>>()?;
    let mut sizes = (0, 0);
    for w in 0..config.warmup {
        let est = estimate(store, schedule, mode, &params, config.wss_batch, &queries[w % queries.len()], t)?;
        std::hint::black_box(&est.x0_hat);
    }
    let mut times = Vec::with_capacity(config.repeats);
    for q in &queries {
        let start = Instant::now();
        let est = estimate(store, schedule, mode, &params, config.wss_batch, q, t)?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(&est.x0_hat);
        sizes = (est.m_t, est.k_t);
    }
    let proxy_dim = store.proxy_cache().map_or(store.dim(), |p| p.dim());
    let g = schedule.g(t);
    let flop_model = FlopModel::new(store.len(), store.dim(), proxy_dim, params.m_of_t(g).min(store.len()));
    Ok(PerfReport {
        mode,
        n: store.len(),
        dim: store.dim(),
        proxy_dim,
        t,
        m_t: sizes.0,
        k_t: sizes.1,
        step_time: median(&mut times.clone()),
        step_times: times,
        flops: flop_model.for_mode(mode),
        flop_model,
        peak_bytes: peak_bytes_estimate(store, mode, sizes.0),
        threads: rayon::current_num_threads(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SensitivityPoint {
    pub t: usize,
    pub requested_size: usize,
    /// Subset size actually used (requests above `N` are clamped).
    pub subset_size: usize,
    pub mse: f64,
}

/// Per-coordinate MSE between full-store denoising and denoising over a
/// uniformly random subset, averaged over `probes` noisy queries at step `t`.
///
/// Probe `p` draws its query and all of its subsets from stream `p` of
/// `seed`, so results do not depend on the thread count.
pub fn subset_sensitivity(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    t: usize,
    sizes: &[usize],
    probes: usize,
    seed: u64,
) -> Result<Vec<SensitivityPoint>> {
    schedule.check_step(t)?;
    if probes == 0 {
        return Err(Error::Argument("at least one probe is required".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Argument("subset sizes must be >= 1".into()));
    }
    let n = store.len();
    let alpha = schedule.alpha(t);
    let sigma_sq = schedule.sigma_sq(t);
    let per_probe: Vec<Vec<f64>> = (0..probes)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64);
            let x0 = store.sample(rng.random_range(0..n)).to_vec();
            let eps = standard_normal_vec(&mut rng, store.dim());
            let query = scaled_query(&schedule.forward_noise(&x0, t, &eps)?, alpha);
            let full = posterior(store, &query, sigma_sq, Support::All)?.mean();
            sizes
                .iter()
                .map(|&size| {
                    let est = if size >= n {
                        posterior(store, &query, sigma_sq, Support::All)?.mean()
                    } else {
                        let mut rows = rand::seq::index::sample(&mut rng, n, size).into_vec();
                        rows.sort_unstable();
                        posterior(store, &query, sigma_sq, Support::Indices(&rows))?.mean()
                    };
                    Ok(crate::kernel::sq_distance(&full, &est) / store.dim() as f64)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(j, &size)| SensitivityPoint {
            t,
            requested_size: size,
            subset_size: size.min(n),
            mse: per_probe.iter().map(|v| v[j]).sum::<f64>() / probes as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream_rng};

    fn naive_mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..a.len() {
            for j in 0..a[i].len() {
                total += (a[i][j] - b[i][j]) * (a[i][j] - b[i][j]);
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn mse_cases() {
        let a = vec![vec![0.0], vec![0.0]];
        let b = vec![vec![1.0], vec![-1.0]];
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert_eq!(mse(&b, &b).unwrap(), 0.0);
        assert!(mse(&a, &b[..1]).is_err());
        assert!(mse(&[vec![0.0, 1.0]], &[vec![0.0]]).is_err());
        let mut rng = stream_rng(2, 0);
        let x: Vec<Vec<f64>> = (0..20).map(|_| standard_normal_vec(&mut rng, 5)).collect();
        let y: Vec<Vec<f64>> = (0..20).map(|_| standard_normal_vec(&mut rng, 5)).collect();
        assert!((mse(&x, &y).unwrap() - naive_mse(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn r2_cases() {
        let r = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(r_squared(&r, &r).unwrap(), 1.0);
        let mean = vec![vec![2.5, 2.5], vec![2.5, 2.5]];
        assert_eq!(r_squared(&mean, &r).unwrap(), 0.0);
        let anti = vec![vec![4.0, 3.0], vec![2.0, 1.0]];
        let ss_res: f64 = 9.0 + 1.0 + 1.0 + 9.0;
        let ss_tot: f64 = 2.25 + 0.25 + 0.25 + 2.25;
        assert!((r_squared(&anti, &r).unwrap() - (1.0 - ss_res / ss_tot)).abs() < 1e-15);
        assert!(r_squared(&anti, &r).unwrap() < 0.0);
        assert!(r_squared(&r, &[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
        let report = ComparisonReport::compare(&r, &r).unwrap();
        assert_eq!((report.mse, report.r2, report.n), (0.0, 1.0, 2));
    }

    #[test]
    fn flop_model_formulas() {
        let f = FlopModel::new(50_000, 784, 49, 8750);
        assert_eq!(f.full, 50_000 * 784);
        assert_eq!(f.golden, 50_000 * 49 + 8750 * 784);
        assert!(f.ratio() >= 4.0);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn zero_repeats_rejected() {
        let store = crate::dataset::make_moons(50, 0.05, 0).unwrap().with_proxy(4).unwrap();
        let schedule = crate::schedule::ScheduleConfig::default().build().unwrap();
        let cfg = BenchConfig { repeats: 0, ..Default::default() };
        assert!(time_denoise_step(&store, &schedule, SamplerMode::FullScan, &cfg).is_err());
        let cfg = BenchConfig { warmup: 1, repeats: 2, ..Default::default() };
        let r = time_denoise_step(&store, &schedule, SamplerMode::Golden, &cfg).unwrap();
        assert_eq!(r.step_times.len(), 2);
        assert_eq!(r.t, 444);
    }

    #[test]
    fn sensitivity_full_size_is_exact_and_small_subsets_are_worse() {
        let store = crate::dataset::make_moons(600, 0.05, 1).unwrap();
        let schedule = crate::schedule::ScheduleConfig::default().build().unwrap();
        let t = schedule.ddim_steps()[2];
        let pts = subset_sensitivity(&store, &schedule, t, &[5, 200, 600, 900], 16, 4).unwrap();
        assert!(pts[0].mse > pts[1].mse);
        assert_eq!(pts[2].mse, 0.0);
        assert_eq!((pts[3].subset_size, pts[3].mse), (600, 0.0));
        assert!(subset_sensitivity(&store, &schedule, t, &[5], 0, 4).is_err());
        assert!(subset_sensitivity(&store, &schedule, t, &[0], 3, 4).is_err());
    }
}
