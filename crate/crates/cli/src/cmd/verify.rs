//! Randomized property suites with replayable failures.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use andiff_core::bounds::{certify_step, compute_bound, logit_gap, AuditMode, CHAIN_SLACK};
use andiff_core::denoiser::{posterior, Support};
use andiff_core::report::num;
use andiff_core::kernel::{l2_distance, sq_distance};
use andiff_core::rng::{standard_normal_vec, stream_rng, Rng as CoreRng};
use andiff_core::selection::{scaled_query, select};
use andiff_core::{DatasetStore, DiffusionSchedule, GoldenSelection, ScheduleParams, SoftmaxAccumulator};
use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RunArgs;
use crate::data::{self, DataArgs, DatasetSpec};
use crate::manifest::Outputs;
use crate::params::ScheduleArgs;

const LARGE_NOISE_MIN_FACTOR: f64 = 0.99;
const SMALL_NOISE_MAX_TAIL: f64 = 1e-6;
const STREAM_REL_TOL: f64 = 1e-10;
const MERGE_REL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    None,
    /// Report the subset estimate without dividing by its partition sum
    SkipRenorm,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per configuration of the bound and asymptotic suites
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Random instances of the streaming suite
    #[arg(long, default_value_t = 50)]
    pub stream_instances: usize,
    /// Deliberately break the estimator to check that the suite notices
    #[arg(long, value_enum, default_value = "none")]
    pub inject_fault: Fault,
    /// Re-evaluate a failure written by an earlier run
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    BoundChain,
    GapHalving,
    LargeNoiseGap,
    SmallNoiseTail,
    StreamingEquivalence,
    MergeAssociativity,
}

impl Check {
    fn suite(self) -> &'static str {
        match self {
            Check::BoundChain => "bound",
            Check::GapHalving | Check::LargeNoiseGap | Check::SmallNoiseTail => "asymptotic",
            Check::StreamingEquivalence | Check::MergeAssociativity => "streaming",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Check::BoundChain => "actual <= 2R Z_tail/Z <= 2R(N-k)exp(-gap)",
            Check::GapHalving => "gap(2 sigma^2) == gap(sigma^2) / 2",
            Check::LargeNoiseGap => "exp(-gap) >= 0.99 at largest sigma for k = N/2",
            Check::SmallNoiseTail => "Z_tail/Z <= 1e-6 at smallest sigma for k = N/20",
            Check::StreamingEquivalence => "streaming == two-pass softmax (1e-10 rel)",
            Check::MergeAssociativity => "3-way merge associativity (1e-12 rel)",
        }
    }

    fn tag(self) -> u64 {
        (self as u64 + 1) << 40
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub check: Check,
    pub id: u64,
    pub step: usize,
    pub k: usize,
}

struct Outcome {
    pass: bool,
    /// Check-specific figure of merit reported in the summary.
    value: f64,
    detail: Value,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub instance: Instance,
    pub seed: u64,
    pub fault: Fault,
    pub dataset_fingerprint: String,
    pub detail: Value,
}

struct Ctx<'a> {
    store: &'a DatasetStore,
    schedule: &'a DiffusionSchedule,
    seed: u64,
    fault: Fault,
}

impl Ctx<'_> {
    fn rng(&self, inst: &Instance) -> CoreRng {
        stream_rng(self.seed, inst.check.tag() | inst.id)
    }

    /// Forward-noised training sample at stride position `step`.
    fn noisy_query(&self, rng: &mut CoreRng, step: usize) -> Result<(usize, Vec<f64>)> {
        let t = self.schedule.ddim_steps()[step];
        let x0 = self.store.sample(rng.random_range(0..self.store.len())).to_vec();
        let eps = standard_normal_vec(rng, self.store.dim());
        Ok((t, self.schedule.forward_noise(&x0, t, &eps)?))
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let den = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    l2_distance(a, b) / den
}

fn evaluate(ctx: &Ctx<'_>, inst: &Instance) -> Result<Outcome> {
    let store = ctx.store;
    let schedule = ctx.schedule;
    let mut rng = ctx.rng(inst);
    match inst.check {
        Check::BoundChain => {
            let (t, query) = ctx.noisy_query(&mut rng, inst.step)?;
            let d = ScheduleParams::defaults_for(store.len());
            let m_min = d.m_min.max(inst.k);
            let params = ScheduleParams::new(store.len(), m_min, d.m_max.max(m_min), inst.k, inst.k)?;
            let sel = select(store, schedule, &params, &query, t)?;
            let mut diag = certify_step(store, schedule, &query, t, &sel, AuditMode::Full)?;
            if ctx.fault == Fault::SkipRenorm {
                let scaled = scaled_query(&query, schedule.alpha(t));
                let sigma_sq = schedule.sigma_sq(t);
                let full = posterior(store, &scaled, sigma_sq, Support::All)?.mean();
                let sub = posterior(store, &scaled, sigma_sq, Support::Indices(&sel.golden))?;
                diag.actual_error = Some(l2_distance(&full, sub.accumulator.running_vec()));
            }
            let actual = diag.actual_error.unwrap_or(0.0);
            Ok(Outcome {
                pass: diag.chain_holds(CHAIN_SLACK),
                value: (actual - diag.ratio_bound).max(diag.ratio_bound - diag.bound),
                detail: json!({
                    "t": t,
                    "k": inst.k,
                    "actual_error": diag.actual_error,
                    "ratio_bound": diag.ratio_bound,
                    "bound": diag.bound,
                    "logit_gap": diag.logit_gap,
                    "recall_ok": diag.recall_ok,
                    "query": query,
                }),
            })
        }
        Check::GapHalving => {
            let (t, query) = ctx.noisy_query(&mut rng, inst.step)?;
            let scaled = scaled_query(&query, schedule.alpha(t));
            let s = schedule.sigma_sq(t);
            let g1 = logit_gap(store, &scaled, s, inst.k)?;
            let g2 = logit_gap(store, &scaled, 2.0 * s, inst.k)?;
            Ok(Outcome {
                pass: g2 == g1 / 2.0,
                value: (g2 - g1 / 2.0).abs(),
                detail: json!({ "t": t, "k": inst.k, "gap": g1, "gap_doubled_sigma": g2, "query": query }),
            })
        }
        Check::LargeNoiseGap => {
            // The initial noise a trajectory with this seed starts from.
            let query = standard_normal_vec(&mut stream_rng(ctx.seed, 0), store.dim());
            let t = schedule.ddim_steps()[inst.step];
            let scaled = scaled_query(&query, schedule.alpha(t));
            let factor = (-logit_gap(store, &scaled, schedule.sigma_sq(t), inst.k)?).exp();
            Ok(Outcome {
                pass: factor >= LARGE_NOISE_MIN_FACTOR,
                value: factor,
                detail: json!({ "t": t, "k": inst.k, "exp_neg_gap": factor, "query": query }),
            })
        }
        Check::SmallNoiseTail => {
            let (t, query) = ctx.noisy_query(&mut rng, inst.step)?;
            let all = GoldenSelection::everything(store, schedule, &query, t)?;
            let d = compute_bound(&all.candidate_logits, inst.k, store.radius())?;
            Ok(Outcome {
                pass: d.tail_ratio <= SMALL_NOISE_MAX_TAIL,
                value: d.tail_ratio,
                detail: json!({ "t": t, "k": inst.k, "tail_ratio": d.tail_ratio, "query": query }),
            })
        }
        Check::StreamingEquivalence | Check::MergeAssociativity => streaming(inst, &mut rng),
    }
}

/// Random Gaussian point set, query and noise level.
fn random_problem(rng: &mut CoreRng, min_n: usize) -> Result<(DatasetStore, Vec<f64>, f64)> {
    let n = rng.random_range(min_n..=3000);
    let dim = rng.random_range(1..=128);
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    let data: Vec<f64> = standard_normal_vec(rng, n * dim).into_iter().map(|v| v * scale).collect();
    let query = standard_normal_vec(rng, dim);
    let sigma_sq = 10f64.powf(rng.random_range(-2.0..2.0));
    Ok((DatasetStore::from_flat(data, dim, None, None)?, query, sigma_sq))
}

fn streaming(inst: &Instance, rng: &mut CoreRng) -> Result<Outcome> {
    match inst.check {
        Check::StreamingEquivalence => {
            let (store, query, sigma_sq) = random_problem(rng, 1)?;
            let fast = posterior(&store, &query, sigma_sq, Support::All)?.mean();
            // Two passes: logits and their maximum, then normalized weights.
            let logits: Vec<f64> =
                (0..store.len()).map(|i| -sq_distance(&query, store.sample(i)) / (2.0 * sigma_sq)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = weights.iter().sum();
            let mut naive = vec![0.0; store.dim()];
            for (i, w) in weights.iter().enumerate() {
                for (a, x) in naive.iter_mut().zip(store.sample(i)) {
                    *a += w / z * x;
                }
            }
            let err = rel_err(&fast, &naive);
            Ok(Outcome {
                pass: err <= STREAM_REL_TOL,
                value: err,
                detail: json!({ "n": store.len(), "dim": store.dim(), "sigma_sq": sigma_sq, "rel_err": err }),
            })
        }
        _ => {
            let (store, query, sigma_sq) = random_problem(rng, 3)?;
            let n = store.len();
            let a = rng.random_range(1..n - 1);
            let b = rng.random_range(a + 1..n);
            let part = |range: std::ops::Range<usize>| {
                let mut acc = SoftmaxAccumulator::new(store.dim());
                for i in range {
                    let x = store.sample(i);
                    acc.update(-sq_distance(&query, x) / (2.0 * sigma_sq), x);
                }
                acc
            };
            let (p1, p2, p3) = (part(0..a), part(a..b), part(b..n));
            let left = p1.merge(&p2)?.merge(&p3)?.finalize().context("empty merge")?;
            let right = p1.merge(&p2.merge(&p3)?)?.finalize().context("empty merge")?;
            let err = rel_err(&left, &right);
            Ok(Outcome {
                pass: err <= MERGE_REL_TOL,
                value: err,
                detail: json!({ "n": n, "dim": store.dim(), "cuts": [a, b], "rel_err": err }),
            })
        }
    }
}

fn plan(store: &DatasetStore, schedule: &DiffusionSchedule, args: &VerifyArgs) -> Vec<Instance> {
    let n = store.len();
    let last = schedule.ddim_steps().len() - 1;
    let mut levels = vec![0, last / 2, last];
    levels.dedup();
    let mut ks: Vec<usize> = [(n / 20).max(1), (n / 10).max(1)].into_iter().filter(|&k| k < n).collect();
    ks.dedup();
    let mut out = Vec::new();
    let mut id = 0u64;
    let mut push = |out: &mut Vec<Instance>, check, step, k| {
        out.push(Instance { check, id, step, k });
        id += 1;
    };
    for &step in &levels {
        for &k in &ks {
            for _ in 0..args.instances {
                push(&mut out, Check::BoundChain, step, k);
            }
        }
    }
    if let Some(&k) = ks.first() {
        for &step in &levels {
            for _ in 0..args.instances {
                push(&mut out, Check::GapHalving, step, k);
            }
        }
        for _ in 0..args.instances {
            push(&mut out, Check::SmallNoiseTail, last, k);
        }
    }
    // The large-noise regime is characterized on the 2-D moons set only.
    if args.data.dataset == DatasetSpec::Moons && n >= 2 {
        push(&mut out, Check::LargeNoiseGap, 0, n / 2);
    }
    for _ in 0..args.stream_instances {
        push(&mut out, Check::StreamingEquivalence, 0, 0);
        push(&mut out, Check::MergeAssociativity, 0, 0);
    }
    out
}

pub fn run(args: &VerifyArgs) -> Result<ExitCode> {
    args.run.init_threads();
    let loaded = data::load(&args.data)?;
    let schedule = args.schedule.build()?;
    if let Some(path) = &args.replay {
        return replay(&loaded, &schedule, path);
    }
    let ctx = Ctx { store: &loaded.store, schedule: &schedule, seed: args.seed, fault: args.inject_fault };
    let instances = plan(&loaded.store, &schedule, args);
    let outcomes: Vec<Outcome> = instances.par_iter().map(|i| evaluate(&ctx, i)).collect::<Result<_>>()?;

    let checks = [
        Check::BoundChain,
        Check::GapHalving,
        Check::LargeNoiseGap,
        Check::SmallNoiseTail,
        Check::StreamingEquivalence,
        Check::MergeAssociativity,
    ];
    let mut out = Outputs::create(&args.run.out)?;
    let mut rows = Vec::new();
    let mut first_failure = None;
    for check in checks {
        let picked: Vec<(&Instance, &Outcome)> =
            instances.iter().zip(&outcomes).filter(|(i, _)| i.check == check).collect();
        if picked.is_empty() {
            rows.push((check, 0, 0, f64::NAN, "skipped"));
            continue;
        }
        let failures = picked.iter().filter(|(_, o)| !o.pass).count();
        let worst = match check {
            Check::LargeNoiseGap => picked.iter().map(|(_, o)| o.value).fold(f64::INFINITY, f64::min),
            _ => picked.iter().map(|(_, o)| o.value).fold(f64::NEG_INFINITY, f64::max),
        };
        if first_failure.is_none() {
            first_failure = picked.iter().find(|(_, o)| !o.pass).map(|(i, o)| FailureRecord {
                instance: **i,
                seed: args.seed,
                fault: args.inject_fault,
                dataset_fingerprint: loaded.fingerprint.clone(),
                detail: o.detail.clone(),
            });
        }
        rows.push((check, picked.len(), failures, worst, if failures == 0 { "pass" } else { "FAIL" }));
    }
    out.write("verify.csv", |w| {
        writeln!(w, "suite,check,instances,failures,worst,status")?;
        for (check, count, failures, worst, status) in &rows {
            writeln!(w, "{},{},{count},{failures},{},{status}", check.suite(), check.name(), num(*worst))?;
        }
        Ok(())
    })?;
    println!("{:<11} {:<46} {:>9} {:>8} {:>12}  status", "suite", "check", "instances", "failures", "worst");
    for (check, count, failures, worst, status) in &rows {
        println!("{:<11} {:<46} {count:>9} {failures:>8} {worst:>12.4e}  {status}", check.suite(), check.name());
    }
    if let Some(record) = &first_failure {
        let path = out.path("failure.json");
        std::fs::write(&path, serde_json::to_string_pretty(record)? + "\n")?;
        eprintln!("first failure written to {}", path.display());
    }
    let resolved = json!({ "n_store": loaded.store.len(), "dim": loaded.store.dim(), "stride": schedule.ddim_steps() });
    out.finish("verify", args, resolved, Some(loaded.fingerprint.clone()), args.seed)?;
    Ok(if first_failure.is_some() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn replay(loaded: &data::Loaded, schedule: &DiffusionSchedule, path: &PathBuf) -> Result<ExitCode> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let record: FailureRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if record.dataset_fingerprint != loaded.fingerprint {
        bail!("dataset differs from the one the failure was recorded on; pass the same --dataset flags");
    }
    let ctx = Ctx { store: &loaded.store, schedule, seed: record.seed, fault: record.fault };
    let outcome = evaluate(&ctx, &record.instance)?;
    println!("{:?} instance {} (seed {}):", record.instance.check, record.instance.id, record.seed);
    let mut shown = outcome.detail.clone();
    if let Some(obj) = shown.as_object_mut() {
        obj.remove("query");
    }
    println!("  {shown}");
    if outcome.pass {
        println!("instance passes");
        return Ok(ExitCode::SUCCESS);
    }
    if outcome.detail == record.detail {
        println!("reproduced identical failure");
    } else {
        println!("failure reproduced with different values");
    }
    Ok(ExitCode::FAILURE)
}
