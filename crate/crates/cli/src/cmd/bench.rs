use std::io::Write;
use std::process::ExitCode;

use andiff_core::denoiser::DEFAULT_WSS_BATCH;
use andiff_core::metrics::BenchConfig;
use andiff_core::report::{self, num};
use andiff_core::{time_denoise_step, SamplerMode};
use anyhow::Result;
use clap::{value_parser, Args};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{RunArgs, UsageError};
use crate::data::{self, DataArgs};
use crate::manifest::Outputs;
use crate::params::{BudgetArgs, ScheduleArgs};

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub budgets: BudgetArgs,
    /// Modes to time, compared at matched settings
    #[arg(long, value_delimiter = ',', default_value = "golden,full")]
    pub modes: Vec<SamplerMode>,
    /// Timed repetitions per mode
    #[arg(long, default_value_t = 10, value_parser = value_parser!(u64).range(1..))]
    pub repeats: u64,
    /// Untimed warm-up repetitions per mode
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Stride position to time (default: middle of the stride)
    #[arg(long)]
    pub stride_index: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_WSS_BATCH)]
    pub wss_batch: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn run(args: &BenchArgs) -> Result<ExitCode> {
    args.run.init_threads();
    if args.modes.is_empty() {
        return Err(UsageError("--modes must name at least one mode".into()).into());
    }
    if args.repeats == 1 {
        eprintln!("warning: --repeats 1 gives an unstable timing estimate");
    }
    let loaded = data::load(&args.data)?;
    let store = &loaded.store;
    let schedule = args.schedule.build()?;
    let params = args.budgets.resolve(store.len(), &schedule)?;
    if args.stride_index.is_some_and(|i| i >= schedule.ddim_steps().len()) {
        return Err(UsageError("--stride-index is outside the stride".into()).into());
    }
    let config = BenchConfig {
        warmup: args.warmup,
        repeats: args.repeats as usize,
        stride_index: args.stride_index,
        params: Some(params),
        seed: args.seed,
        wss_batch: args.wss_batch,
    };
    let reports = args
        .modes
        .iter()
        .map(|&mode| time_denoise_step(store, &schedule, mode, &config))
        .collect::<andiff_core::Result<Vec<_>>>()?;
    let full_time = reports.iter().find(|r| r.mode == SamplerMode::FullScan).map(|r| r.step_time);

    let mut out = Outputs::create(&args.run.out)?;
    out.write("bench.csv", |w| {
        report::write_bench_header(&mut *w)?;
        for r in &reports {
            report::write_bench_row(&mut *w, r)?;
        }
        Ok(())
    })?;
    out.write("speedup.csv", |w| {
        writeln!(w, "mode,step_time_ms,speedup_vs_full,flop_ratio_vs_full")?;
        for r in &reports {
            let speedup = full_time.map(|f| num(f / r.step_time)).unwrap_or_default();
            let flop_ratio = r.flop_model.full as f64 / r.flops as f64;
            writeln!(w, "{},{},{speedup},{}", r.mode.name(), num(r.step_time * 1e3), num(flop_ratio))?;
        }
        Ok(())
    })?;
    println!("{:<8} {:>8} {:>5} {:>4} {:>7} {:>7} {:>12} {:>9} {:>12}", "mode", "N", "D", "d", "m_t", "k_t", "step_ms", "speedup", "flops");
    for r in &reports {
        let speedup = full_time.map_or("-".to_string(), |f| format!("{:.2}x", f / r.step_time));
        println!(
            "{:<8} {:>8} {:>5} {:>4} {:>7} {:>7} {:>12.3} {:>9} {:>12}",
            r.mode.name(),
            r.n,
            r.dim,
            r.proxy_dim,
            r.m_t,
            r.k_t,
            r.step_time * 1e3,
            speedup,
            r.flops
        );
    }
    let first = &reports[0];
    let resolved = json!({
        "n_store": store.len(),
        "dim": store.dim(),
        "t": first.t,
        "params": params,
        "flop_model": first.flop_model,
        "flop_ratio": first.flop_model.ratio(),
        "threads": first.threads,
    });
    out.finish("bench", args, resolved, Some(loaded.fingerprint.clone()), args.seed)?;
    Ok(ExitCode::SUCCESS)
}
