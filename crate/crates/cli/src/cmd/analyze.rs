use std::io::Write;
use std::process::ExitCode;

use andiff_core::metrics::median;
use andiff_core::report::num;
use andiff_core::{denoise_trajectory_stats, sample_batch, subset_sensitivity, SamplerConfig, SamplerMode};
use anyhow::Result;
use clap::{value_parser, Args};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{RunArgs, UsageError};
use crate::data::{self, DataArgs};
use crate::manifest::Outputs;
use crate::params::{BudgetArgs, ScheduleArgs};

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub budgets: BudgetArgs,
    /// Sampler mode of the concentration sweep
    #[arg(long, default_value = "golden")]
    pub mode: SamplerMode,
    /// Trajectories in the concentration sweep (0 skips it)
    #[arg(long, default_value_t = 32)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random subset sizes of the sensitivity sweep
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,5000")]
    pub subset_sizes: Vec<usize>,
    /// Noisy probes per step in the sensitivity sweep
    #[arg(long, default_value_t = 64, value_parser = value_parser!(u64).range(1..))]
    pub queries: u64,
    /// Stride positions probed by the sensitivity sweep (default: all)
    #[arg(long, value_delimiter = ',')]
    pub probe_steps: Vec<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn run(args: &AnalyzeArgs) -> Result<ExitCode> {
    args.run.init_threads();
    let loaded = data::load(&args.data)?;
    let store = &loaded.store;
    let schedule = args.schedule.build()?;
    let params = args.budgets.resolve(store.len(), &schedule)?;
    let stride = schedule.ddim_steps();
    let probe_steps: Vec<usize> = if args.probe_steps.is_empty() {
        (0..stride.len()).collect()
    } else {
        args.probe_steps.clone()
    };
    if let Some(&bad) = probe_steps.iter().find(|&&s| s >= stride.len()) {
        return Err(UsageError(format!("--probe-steps {bad} is outside a stride of {} steps", stride.len())).into());
    }
    if args.subset_sizes.contains(&0) {
        return Err(UsageError("--subset-sizes must be >= 1".into()).into());
    }
    for &s in args.subset_sizes.iter().filter(|&&s| s > store.len()) {
        eprintln!("warning: subset size {s} exceeds N = {}; clamped", store.len());
    }
    let mut out = Outputs::create(&args.run.out)?;

    if args.trajectories > 0 {
        let config = SamplerConfig {
            n_steps: stride.len(),
            mode: args.mode,
            schedule_params: Some(params),
            seed: args.seed,
            ..SamplerConfig::default()
        };
        let trajectories = sample_batch(store, &schedule, &config, args.trajectories)?;
        let stats = trajectories.iter().map(denoise_trajectory_stats).collect::<andiff_core::Result<Vec<_>>>()?;
        out.write("concentration.csv", |w| {
            writeln!(w, "step,t,g,m_t,k_t,median_entropy,median_eff_support,min_eff_support,max_eff_support")?;
            for (step, &t) in stride.iter().enumerate() {
                let mut eff: Vec<f64> = stats.iter().map(|s| s[step].effective_support).collect();
                let mut ent: Vec<f64> = stats.iter().map(|s| s[step].entropy).collect();
                let lo = eff.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = eff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let first = &stats[0][step];
                writeln!(
                    w,
                    "{step},{t},{},{},{},{},{},{},{}",
                    num(schedule.g(t)),
                    first.m_t,
                    first.k_t,
                    num(median(&mut ent)),
                    num(median(&mut eff)),
                    num(lo),
                    num(hi)
                )?;
            }
            Ok(())
        })?;
    }

    let mut rows = Vec::new();
    for &step in &probe_steps {
        let t = stride[step];
        let points = subset_sensitivity(store, &schedule, t, &args.subset_sizes, args.queries as usize, args.seed)?;
        rows.extend(points.into_iter().map(|p| (step, p)));
    }
    out.write("sensitivity.csv", |w| {
        writeln!(w, "step,t,g,subset_size,mse")?;
        for (step, p) in &rows {
            writeln!(w, "{step},{},{},{},{}", p.t, num(schedule.g(p.t)), p.subset_size, num(p.mse))?;
        }
        Ok(())
    })?;
    for (step, p) in &rows {
        println!("step {step:>2} t {:>4} subset {:>6}: mse {:.6e}", p.t, p.subset_size, p.mse);
    }
    let resolved = json!({
        "n_store": store.len(),
        "dim": store.dim(),
        "stride": stride,
        "probe_steps": probe_steps,
        "params": params,
    });
    out.finish("analyze", args, resolved, Some(loaded.fingerprint.clone()), args.seed)?;
    Ok(ExitCode::SUCCESS)
}
