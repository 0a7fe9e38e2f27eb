//! Schedule and budget flags shared by several commands.

use andiff_core::schedule::{DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_STEPS, DEFAULT_T};
use andiff_core::selection::SizeSpec;
use andiff_core::{DiffusionSchedule, ScheduleConfig, ScheduleParams};
use clap::{value_parser, Args};
use serde::{Deserialize, Serialize};

use crate::cmd::UsageError;

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleArgs {
    /// Number of DDIM sampling steps
    #[arg(long, default_value_t = DEFAULT_STEPS as u64, value_parser = value_parser!(u64).range(1..))]
    pub steps: u64,
    /// Length of the forward process
    #[arg(long, default_value_t = DEFAULT_T)]
    pub timesteps: usize,
    #[arg(long, default_value_t = DEFAULT_BETA_MIN)]
    pub beta_min: f64,
    #[arg(long, default_value_t = DEFAULT_BETA_MAX)]
    pub beta_max: f64,
}

impl ScheduleArgs {
    pub fn build(&self) -> Result<DiffusionSchedule, UsageError> {
        ScheduleConfig {
            timesteps: self.timesteps,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            sample_steps: self.steps as usize,
        }
        .build()
        .map_err(|e| UsageError(e.to_string()))
    }
}

/// Candidate and support budgets, each a fraction of N ("0.1", "1/10") or
/// an absolute count ("500"). Unset values take the size-based defaults.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct BudgetArgs {
    /// Coarse candidate count at the highest noise; a count, a fraction like 0.1 or 1/10 [default: N/10]
    #[arg(long)]
    pub m_min: Option<SizeSpec>,
    /// Coarse candidate count at the lowest noise [default: N/4]
    #[arg(long)]
    pub m_max: Option<SizeSpec>,
    /// Golden-set size at the lowest noise [default: N/20]
    #[arg(long)]
    pub k_min: Option<SizeSpec>,
    /// Golden-set size at the highest noise [default: N/10]
    #[arg(long)]
    pub k_max: Option<SizeSpec>,
}

impl BudgetArgs {
    pub fn resolve(&self, n: usize, schedule: &DiffusionSchedule) -> Result<ScheduleParams, UsageError> {
        let d = ScheduleParams::defaults_for(n);
        let pick = |v: Option<SizeSpec>, default: usize| v.map_or(default, |s| s.resolve(n));
        let params = ScheduleParams::new(
            n,
            pick(self.m_min, d.m_min),
            pick(self.m_max, d.m_max),
            pick(self.k_min, d.k_min),
            pick(self.k_max, d.k_max),
        )
        .map_err(|e| UsageError(e.to_string()))?;
        params.validate_for(schedule).map_err(|e| UsageError(e.to_string()))?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_resolve_fractions_and_counts() {
        let schedule = ScheduleConfig::default().build().unwrap();
        let b = BudgetArgs { m_min: Some("1/5".parse().unwrap()), k_max: Some("150".parse().unwrap()), ..Default::default() };
        let p = b.resolve(1000, &schedule).unwrap();
        assert_eq!((p.m_min, p.m_max, p.k_min, p.k_max), (200, 250, 50, 150));
        let bad = BudgetArgs { k_max: Some("0.5".parse().unwrap()), ..Default::default() };
        assert!(bad.resolve(1000, &schedule).is_err());
    }
}
