//! Training-free diffusion sampling with the exact empirical-Bayes denoiser.
//!
//! The denoiser is a softmax-weighted average of training samples. Sampling
//! cost is cut by a time-aware support: a cheap proxy screen keeps `m_t`
//! candidates, exact logits keep the best `k_t`, and the truncation error of
//! every step can be certified against the logit-gap bound in [`bounds`].

pub mod bounds;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod selection;

pub use bounds::{certify_step, compute_bound, gap_trajectory, AuditMode, BoundDiagnostics};
pub use dataset::{compute_radius, load_csv, load_idx, make_moons, DatasetStore, ImageShape, Sample};
pub use denoiser::{
    denoise_full, denoise_subset, denoise_weighted_stream, logit, merge_accumulators, DenoiseResult,
    SoftmaxAccumulator, WeightSummary,
};
pub use error::{Error, Result};
pub use metrics::{
    mse, r_squared, subset_sensitivity, time_denoise_step, ComparisonReport, FlopModel, PerfReport, SensitivityPoint,
};
pub use sampler::{denoise_trajectory_stats, sample, sample_batch, SamplerConfig, SamplerMode, Trajectory};
pub use schedule::{DiffusionSchedule, ScheduleConfig};
pub use selection::{coarse_screen, golden_select, k_of_t, m_of_t, GoldenSelection, ScheduleParams};
