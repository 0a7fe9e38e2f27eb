//! CSV and image writers for run artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce identical bytes.

use std::io::Write;

use crate::bounds::BoundDiagnostics;
use crate::dataset::ImageShape;
use crate::error::{Error, Result};
use crate::metrics::PerfReport;
use crate::sampler::{denoise_trajectory_stats, Trajectory};
use crate::schedule::DiffusionSchedule;

/// Shortest round-trip text of `v`, switching to exponent notation for very
/// large or small magnitudes.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// `t,alpha,sigma_sq,g` for every timestep.
pub fn write_schedule_csv(mut w: impl Write, schedule: &DiffusionSchedule) -> Result<()> {
    writeln!(w, "t,alpha,sigma_sq,g")?;
    for t in 0..schedule.len() {
        writeln!(w, "{t},{},{},{}", num(schedule.alpha(t)), num(schedule.sigma_sq(t)), num(schedule.g(t)))?;
    }
    Ok(())
}

/// `step,g,m_t,k_t,min_logit_in_S,max_logit,logit_gap`; steps without a
/// selection (full scan) are skipped.
pub fn write_selection_csv(mut w: impl Write, traj: &Trajectory) -> Result<()> {
    writeln!(w, "step,g,m_t,k_t,min_logit_in_S,max_logit,logit_gap")?;
    for s in &traj.steps {
        if let Some(sel) = &s.selection {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.step,
                num(s.g),
                s.m_t,
                s.k_t,
                num(sel.min_logit_in_golden),
                num(sel.max_logit),
                num(sel.logit_gap)
            )?;
        }
    }
    Ok(())
}

pub fn write_audit_header(mut w: impl Write) -> Result<()> {
    writeln!(w, "step,sigma_sq,k,delta_k,bound,ratio_bound,actual_error,recall_ok")?;
    Ok(())
}

pub fn write_audit_row(mut w: impl Write, step: usize, sigma_sq: f64, d: &BoundDiagnostics) -> Result<()> {
    writeln!(
        w,
        "{step},{},{},{},{},{},{},{}",
        num(sigma_sq),
        d.k_used,
        num(d.logit_gap),
        num(d.bound),
        num(d.ratio_bound),
        opt(d.actual_error),
        d.recall_ok.map(|r| r.to_string()).unwrap_or_default()
    )?;
    Ok(())
}

/// `step,sigma_sq,k,delta_k,bound,ratio_bound,actual_error,recall_ok` for
/// every audited step.
pub fn write_audit_csv(mut w: impl Write, traj: &Trajectory, schedule: &DiffusionSchedule) -> Result<()> {
    write_audit_header(&mut w)?;
    for s in &traj.steps {
        if let Some(d) = &s.audit {
            write_audit_row(&mut w, s.step, schedule.sigma_sq(s.t), d)?;
        }
    }
    Ok(())
}

/// `step,entropy,eff_support,max_weight,m_t,k_t,step_time_ms`; the time
/// column is empty unless timing was recorded.
pub fn write_trajectory_csv(mut w: impl Write, traj: &Trajectory) -> Result<()> {
    writeln!(w, "step,entropy,eff_support,max_weight,m_t,k_t,step_time_ms")?;
    for s in denoise_trajectory_stats(traj)? {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.step,
            num(s.entropy),
            num(s.effective_support),
            num(s.max_weight),
            s.m_t,
            s.k_t,
            opt(s.step_time_ms)
        )?;
    }
    Ok(())
}

pub fn write_bench_header(mut w: impl Write) -> Result<()> {
    writeln!(w, "mode,N,D,d,m_t,k_t,step_time_ms,flops_model,peak_bytes")?;
    Ok(())
}

pub fn write_bench_row(mut w: impl Write, r: &PerfReport) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{}",
        r.mode.name(),
        r.n,
        r.dim,
        r.proxy_dim,
        r.m_t,
        r.k_t,
        num(r.step_time * 1e3),
        r.flops,
        r.peak_bytes
    )?;
    Ok(())
}

/// One row per point, columns `x0,x1,...` (or `x,y` in two dimensions).
pub fn write_points_csv(mut w: impl Write, points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(0, Vec::len);
    let header: Vec<String> = if dim == 2 {
        vec!["x".into(), "y".into()]
    } else {
        (0..dim).map(|j| format!("x{j}")).collect()
    };
    writeln!(w, "{}", header.join(","))?;
    for p in points {
        let row: Vec<String> = p.iter().map(|&v| num(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Binary PGM (P5) of a single-channel image with values in `[-1, 1]`.
pub fn write_pgm(mut w: impl Write, x: &[f64], shape: ImageShape) -> Result<()> {
    if shape.channels != 1 || shape.len() != x.len() {
        return Err(Error::Argument("PGM output needs a single-channel image of matching size".into()));
    }
    write!(w, "P5\n{} {}\n255\n", shape.width, shape.height)?;
    let bytes: Vec<u8> = x.iter().map(|&v| crate::dataset::unit_to_byte(v)).collect();
    w.write_all(&bytes)?;
    Ok(())
}
