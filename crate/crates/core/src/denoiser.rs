//! Empirical-Bayes posterior mean.
//!
//! For a noisy query `x` at step `t` the denoiser returns
//! `sum_i softmax_i(l) x_i` with logits
//! `l_i = -||x / sqrt(alpha_t) - x_i||^2 / (2 sigma_t^2)`. Aggregation is a
//! single streaming pass with a running max, so every exponent is `<= 0`.
//! Rows are processed in fixed-size shards whose accumulators are merged
//! left to right, which makes results independent of the thread count.

use rayon::prelude::*;

use crate::bounds::BoundDiagnostics;
use crate::dataset::DatasetStore;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{axpy, scale_add, sq_distance};
use crate::schedule::DiffusionSchedule;
use crate::selection::{scaled_query, GoldenSelection};

/// Rows per shard of a streaming pass.
pub const SHARD_ROWS: usize = 1024;
pub const DEFAULT_WSS_BATCH: usize = 32;
/// Number of leading weights kept in a [`WeightSummary`].
pub const TOP_WEIGHTS: usize = 8;

/// Running state of a max-shifted softmax-weighted sum.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxAccumulator {
    max: f64,
    sum: f64,
    vec: Vec<f64>,
}

impl SoftmaxAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0, vec: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum == 0.0
    }

    pub fn running_max(&self) -> f64 {
        self.max
    }

    /// `sum_i exp(l_i - max)`
    pub fn running_sum(&self) -> f64 {
        self.sum
    }

    /// `sum_i exp(l_i - max) x_i`
    pub fn running_vec(&self) -> &[f64] {
        &self.vec
    }

    #[inline]
    pub fn update(&mut self, logit: f64, x: &[f64]) {
        if logit == f64::NEG_INFINITY {
            return;
        }
        if logit > self.max {
            let scale = (self.max - logit).exp();
            self.sum = self.sum * scale + 1.0;
            scale_add(&mut self.vec, scale, 1.0, x);
            self.max = logit;
        } else {
            let w = (logit - self.max).exp();
            self.sum += w;
            axpy(&mut self.vec, w, x);
        }
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        check_dim("accumulator merge", self.dim(), other.dim())?;
        if other.is_empty() {
            return Ok(self.clone());
        }
        if self.is_empty() {
            return Ok(other.clone());
        }
        let max = self.max.max(other.max);
        let (sa, sb) = ((self.max - max).exp(), (other.max - max).exp());
        let vec = self.vec.iter().zip(&other.vec).map(|(a, b)| sa * a + sb * b).collect();
        Ok(Self { max, sum: sa * self.sum + sb * other.sum, vec })
    }

    /// Weighted mean, or `None` if nothing was accumulated.
    pub fn finalize(&self) -> Option<Vec<f64>> {
        if self.is_empty() {
            return None;
        }
        let inv = 1.0 / self.sum;
        Some(self.vec.iter().map(|v| v * inv).collect())
    }
}

pub fn merge_accumulators(a: &SoftmaxAccumulator, b: &SoftmaxAccumulator) -> Result<SoftmaxAccumulator> {
    a.merge(b)
}

/// Shape of a weight distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSummary {
    pub support: usize,
    pub entropy: f64,
    pub effective_support: f64,
    pub max_weight: f64,
    /// Largest weights in descending order (at most [`TOP_WEIGHTS`]).
    pub top_weights: Vec<f64>,
}

impl WeightSummary {
    pub fn from_logits(logits: &[f64]) -> Option<Self> {
        Self::from_weights(&softmax(logits)?)
    }

    pub fn from_weights(weights: &[f64]) -> Option<Self> {
        if weights.is_empty() {
            return None;
        }
        let entropy = -weights.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>();
        let entropy = entropy.max(0.0);
        let mut top: Vec<f64> = weights.to_vec();
        let keep = TOP_WEIGHTS.min(top.len());
        top.select_nth_unstable_by(keep - 1, |a, b| b.total_cmp(a));
        top.truncate(keep);
        top.sort_unstable_by(|a, b| b.total_cmp(a));
        Some(Self {
            support: weights.len(),
            entropy,
            effective_support: entropy.exp(),
            max_weight: top[0],
            top_weights: top,
        })
    }

    pub fn top_mass(&self) -> f64 {
        self.top_weights.iter().sum()
    }
}

/// Materialized softmax with max shift.
pub fn softmax(logits: &[f64]) -> Option<Vec<f64>> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Some(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Clone, Debug)]
pub struct DenoiseResult {
    pub x0_hat: Vec<f64>,
    pub weights_summary: Option<WeightSummary>,
    pub diagnostics: Option<BoundDiagnostics>,
}

/// Result of a streaming pass over an explicit support.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub accumulator: SoftmaxAccumulator,
    /// Logits in support order.
    pub logits: Vec<f64>,
}

impl Posterior {
    pub fn mean(&self) -> Vec<f64> {
        self.accumulator.finalize().expect("posterior over a nonempty support")
    }

    pub fn into_result(self) -> DenoiseResult {
        let weights_summary = WeightSummary::from_logits(&self.logits);
        DenoiseResult { x0_hat: self.mean(), weights_summary, diagnostics: None }
    }
}

/// Rows a streaming pass visits, in order.
#[derive(Clone, Copy, Debug)]
pub enum Support<'a> {
    All,
    Indices(&'a [usize]),
}

impl Support<'_> {
    fn len(&self, store: &DatasetStore) -> usize {
        match self {
            Support::All => store.len(),
            Support::Indices(ix) => ix.len(),
        }
    }

    #[inline]
    fn row(&self, pos: usize) -> usize {
        match self {
            Support::All => pos,
            Support::Indices(ix) => ix[pos],
        }
    }
}

/// `-||x / sqrt(alpha) - sample||^2 / (2 sigma^2)`
pub fn logit(query: &[f64], sample: &[f64], alpha: f64, sigma_sq: f64) -> Result<f64> {
    check_dim("logit", query.len(), sample.len())?;
    if !(sigma_sq > 0.0) {
        return Err(Error::Argument(format!("sigma^2 must be positive, got {sigma_sq}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Argument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let scaled = scaled_query(query, alpha);
    Ok(-sq_distance(&scaled, sample) / (2.0 * sigma_sq))
}

/// Streaming softmax over `support` for an already rescaled query.
pub fn posterior(store: &DatasetStore, scaled_query: &[f64], sigma_sq: f64, support: Support<'_>) -> Result<Posterior> {
    check_dim("query", store.dim(), scaled_query.len())?;
    if !(sigma_sq > 0.0) {
        return Err(Error::Argument(format!("sigma^2 must be positive, got {sigma_sq}")));
    }
    let len = support.len(store);
    if len == 0 {
        return Err(Error::EmptySelection("empty support".into()));
    }
    let two_sigma_sq = 2.0 * sigma_sq;
    let shards: Vec<(SoftmaxAccumulator, Vec<f64>)> = (0..len.div_ceil(SHARD_ROWS))
        .into_par_iter()
        .map(|s| {
            let mut acc = SoftmaxAccumulator::new(store.dim());
            let range = s * SHARD_ROWS..((s + 1) * SHARD_ROWS).min(len);
            let mut logits = Vec::with_capacity(range.len());
            for pos in range {
                let x = store.sample(support.row(pos));
                let l = -sq_distance(scaled_query, x) / two_sigma_sq;
                acc.update(l, x);
                logits.push(l);
            }
            (acc, logits)
        })
        .collect();
    let mut acc = SoftmaxAccumulator::new(store.dim());
    let mut logits = Vec::with_capacity(len);
    for (shard, l) in shards {
        acc = acc.merge(&shard)?;
        logits.extend(l);
    }
    Ok(Posterior { accumulator: acc, logits })
}

/// Exact denoiser over the whole store.
pub fn denoise_full(store: &DatasetStore, schedule: &DiffusionSchedule, query: &[f64], t: usize) -> Result<DenoiseResult> {
    schedule.check_step(t)?;
    let scaled = scaled_query(query, schedule.alpha(t));
    Ok(posterior(store, &scaled, schedule.sigma_sq(t), Support::All)?.into_result())
}

/// Denoiser renormalized over the golden set only.
pub fn denoise_subset(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    query: &[f64],
    t: usize,
    golden: &GoldenSelection,
) -> Result<DenoiseResult> {
    schedule.check_step(t)?;
    if golden.golden.is_empty() {
        return Err(Error::EmptySelection("golden set is empty".into()));
    }
    if let Some(&bad) = golden.golden.iter().find(|&&i| i >= store.len()) {
        return Err(Error::Argument(format!("golden index {bad} out of range")));
    }
    let scaled = scaled_query(query, schedule.alpha(t));
    Ok(posterior(store, &scaled, schedule.sigma_sq(t), Support::Indices(&golden.golden))?.into_result())
}

/// Batch-averaged softmax: consecutive batches of `batch_size` support rows
/// each produce a softmax-weighted mean, and the batch means are averaged
/// with equal weight regardless of each batch's probability mass.
pub fn weighted_stream(
    store: &DatasetStore,
    scaled_query: &[f64],
    sigma_sq: f64,
    support: Support<'_>,
    batch_size: usize,
) -> Result<DenoiseResult> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    check_dim("query", store.dim(), scaled_query.len())?;
    if !(sigma_sq > 0.0) {
        return Err(Error::Argument(format!("sigma^2 must be positive, got {sigma_sq}")));
    }
    let len = support.len(store);
    if len == 0 {
        return Err(Error::EmptySelection("empty support".into()));
    }
    let two_sigma_sq = 2.0 * sigma_sq;
    let n_batches = len.div_ceil(batch_size);
    let mut mean = vec![0.0; store.dim()];
    let mut weights = Vec::with_capacity(len);
    for b in 0..n_batches {
        let range = b * batch_size..((b + 1) * batch_size).min(len);
        let mut acc = SoftmaxAccumulator::new(store.dim());
        let mut logits = Vec::with_capacity(range.len());
        for pos in range {
            let x = store.sample(support.row(pos));
            let l = -sq_distance(scaled_query, x) / two_sigma_sq;
            acc.update(l, x);
            logits.push(l);
        }
        let batch_mean = acc.finalize().expect("nonempty batch");
        axpy(&mut mean, 1.0 / n_batches as f64, &batch_mean);
        let batch_weights = softmax(&logits).expect("finite logits");
        weights.extend(batch_weights.into_iter().map(|w| w / n_batches as f64));
    }
    Ok(DenoiseResult {
        x0_hat: mean,
        weights_summary: WeightSummary::from_weights(&weights),
        diagnostics: None,
    })
}

/// Batch-averaged softmax over the whole store, in index order.
pub fn denoise_weighted_stream(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    query: &[f64],
    t: usize,
    batch_size: usize,
) -> Result<DenoiseResult> {
    schedule.check_step(t)?;
    let scaled = scaled_query(query, schedule.alpha(t));
    weighted_stream(store, &scaled, schedule.sigma_sq(t), Support::All, batch_size)
}
