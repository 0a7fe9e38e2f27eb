use std::io::Write;
use std::process::ExitCode;

use andiff_core::dataset::{synthetic_digits, write_idx_images, write_idx_labels};
use andiff_core::make_moons;
use andiff_core::report::num;
use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::RunArgs;
use crate::manifest::Outputs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrepareKind {
    /// Two interleaving half circles as `moons.csv` (x,y,label)
    Moons,
    /// Procedurally rendered 28x28 digits as `images.idx` and `labels.idx`
    Digits,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct PrepareArgs {
    #[arg(value_enum)]
    pub kind: PrepareKind,
    /// Number of samples
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Gaussian jitter of moons points
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn run(args: &PrepareArgs) -> Result<ExitCode> {
    args.run.init_threads();
    let mut out = Outputs::create(&args.run.out)?;
    let fingerprint = match args.kind {
        PrepareKind::Moons => {
            let store = make_moons(args.n, args.noise, args.seed)?;
            out.write("moons.csv", |w| {
                writeln!(w, "x,y,label")?;
                for i in 0..store.len() {
                    let p = store.sample(i);
                    writeln!(w, "{},{},{}", num(p[0]), num(p[1]), store.label(i).unwrap_or(0))?;
                }
                Ok(())
            })?;
            crate::data::fingerprint(&store)
        }
        PrepareKind::Digits => {
            if args.n == 0 {
                return Err(super::UsageError("--n must be >= 1".into()).into());
            }
            let (images, labels) = synthetic_digits(args.n, args.seed);
            out.write("images.idx", |w| write_idx_images(w, &images))?;
            out.write("labels.idx", |w| write_idx_labels(w, &labels))?;
            let store = andiff_core::load_idx(&out.path("images.idx"), Some(&out.path("labels.idx")))?;
            crate::data::fingerprint(&store)
        }
    };
    println!("wrote {} samples to {}", args.n, args.run.out.display());
    out.finish("prepare", args, json!({ "n": args.n }), Some(fingerprint), args.seed)?;
    Ok(ExitCode::SUCCESS)
}
