use std::process::ExitCode;

use andiff_core::bounds::CHAIN_SLACK;
use andiff_core::denoiser::DEFAULT_WSS_BATCH;
use andiff_core::report;
use andiff_core::{sample_batch, SamplerConfig, SamplerMode};
use anyhow::Result;
use clap::{value_parser, Args};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{RunArgs, UsageError};
use crate::data::{self, DataArgs};
use crate::manifest::Outputs;
use crate::params::{BudgetArgs, ScheduleArgs};

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SampleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub budgets: BudgetArgs,
    /// golden, full or wss
    #[arg(long, default_value = "golden")]
    pub mode: SamplerMode,
    /// Number of samples to draw
    #[arg(long, default_value_t = 16, value_parser = value_parser!(u64).range(1..))]
    pub n: u64,
    /// Base seed; sample i uses seed + i
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// DDIM stochasticity in [0, 1]
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Certify every k-th step against a full scan (0 disables)
    #[arg(long, default_value_t = 0)]
    pub audit_every: usize,
    /// Batch size of the weighted-streaming ablation
    #[arg(long, default_value_t = DEFAULT_WSS_BATCH)]
    pub wss_batch: usize,
    /// Record per-step wall time (makes trajectory CSVs run-dependent)
    #[arg(long)]
    pub record_timing: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn run(args: &SampleArgs) -> Result<ExitCode> {
    args.run.init_threads();
    if !(0.0..=1.0).contains(&args.eta) {
        return Err(UsageError(format!("--eta must lie in [0, 1], got {}", args.eta)).into());
    }
    if args.wss_batch == 0 {
        return Err(UsageError("--wss-batch must be >= 1".into()).into());
    }
    let loaded = data::load(&args.data)?;
    let store = &loaded.store;
    let schedule = args.schedule.build()?;
    let params = args.budgets.resolve(store.len(), &schedule)?;
    let config = SamplerConfig {
        n_steps: args.schedule.steps as usize,
        eta: args.eta,
        mode: args.mode,
        schedule_params: Some(params),
        audit_every: args.audit_every,
        seed: args.seed,
        wss_batch: args.wss_batch,
        record_timing: args.record_timing,
    };
    let trajectories = sample_batch(store, &schedule, &config, args.n as usize)?;

    let mut out = Outputs::create(&args.run.out)?;
    out.write("schedule.csv", |w| report::write_schedule_csv(w, &schedule))?;
    match store.shape().filter(|s| s.channels == 1) {
        Some(shape) => {
            for (i, traj) in trajectories.iter().enumerate() {
                out.write(&format!("samples/sample_{i:04}.pgm"), |w| report::write_pgm(w, &traj.sample, shape))?;
            }
        }
        None => {
            let points: Vec<Vec<f64>> = trajectories.iter().map(|t| t.sample.clone()).collect();
            out.write("samples.csv", |w| report::write_points_csv(w, &points))?;
        }
    }
    let (mut audited, mut violations, mut recall_misses) = (0usize, 0usize, 0usize);
    for (i, traj) in trajectories.iter().enumerate() {
        out.write(&format!("traj/trajectory_{i:04}.csv"), |w| report::write_trajectory_csv(w, traj))?;
        if args.mode != SamplerMode::FullScan {
            out.write(&format!("traj/selection_{i:04}.csv"), |w| report::write_selection_csv(w, traj))?;
        }
        if args.audit_every > 0 {
            out.write(&format!("traj/audit_{i:04}.csv"), |w| report::write_audit_csv(w, traj, &schedule))?;
            for d in traj.steps.iter().filter_map(|s| s.audit.as_ref()) {
                audited += 1;
                violations += usize::from(!d.chain_holds(CHAIN_SLACK));
                recall_misses += usize::from(d.recall_ok == Some(false));
            }
        }
    }
    println!(
        "{} samples, mode {}, N = {}, D = {}, stride {:?}",
        trajectories.len(),
        args.mode.name(),
        store.len(),
        store.dim(),
        schedule.ddim_steps()
    );
    if args.audit_every > 0 {
        println!("audited {audited} steps: {violations} bound-chain violations, {recall_misses} inexact top-k supports");
    }
    let resolved = json!({
        "n_store": store.len(),
        "dim": store.dim(),
        "radius": store.radius(),
        "proxy_dim": store.proxy_cache().map(|p| p.dim()),
        "stride": schedule.ddim_steps(),
        "params": params,
    });
    out.finish("sample", args, resolved, Some(loaded.fingerprint.clone()), args.seed)?;
    if violations > 0 {
        eprintln!("bound chain violated on {violations} audited steps");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
