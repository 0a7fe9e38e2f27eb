use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Args;
use serde::de::DeserializeOwned;

use super::{analyze, bench, prepare, sample, verify, RunArgs};
use crate::manifest::RunManifest;

#[derive(Args, Clone, Debug)]
pub struct ReplayArgs {
    /// A manifest.json, or the output directory holding it
    pub manifest: PathBuf,
    /// Write into this directory instead of the original one
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the recorded thread count
    #[arg(long)]
    pub threads: Option<usize>,
}

fn config<T: DeserializeOwned>(manifest: &RunManifest) -> Result<T> {
    Ok(serde_json::from_value(manifest.config.clone())?)
}

fn retarget(run: &mut RunArgs, args: &ReplayArgs) {
    if let Some(out) = &args.out {
        run.out = out.clone();
    }
    if let Some(threads) = args.threads {
        run.threads = threads;
    }
}

pub fn run(args: &ReplayArgs) -> Result<ExitCode> {
    let manifest = RunManifest::read(&args.manifest)?;
    println!("replaying `{}` from {}", manifest.command, args.manifest.display());
    let (code, out) = match manifest.command.as_str() {
        "prepare" => {
            let mut a: prepare::PrepareArgs = config(&manifest)?;
            retarget(&mut a.run, args);
            (prepare::run(&a)?, a.run.out)
        }
        "sample" => {
            let mut a: sample::SampleArgs = config(&manifest)?;
            retarget(&mut a.run, args);
            (sample::run(&a)?, a.run.out)
        }
        "analyze" => {
            let mut a: analyze::AnalyzeArgs = config(&manifest)?;
            retarget(&mut a.run, args);
            (analyze::run(&a)?, a.run.out)
        }
        "bench" => {
            let mut a: bench::BenchArgs = config(&manifest)?;
            retarget(&mut a.run, args);
            (bench::run(&a)?, a.run.out)
        }
        "verify" => {
            let mut a: verify::VerifyArgs = config(&manifest)?;
            retarget(&mut a.run, args);
            (verify::run(&a)?, a.run.out)
        }
        other => bail!("manifest names unknown command {other:?}"),
    };
    let rerun = RunManifest::read(&out)?;
    if rerun.dataset_fingerprint != manifest.dataset_fingerprint {
        bail!("dataset fingerprint changed since the recorded run; outputs are not comparable");
    }
    Ok(code)
}
