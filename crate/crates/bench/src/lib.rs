//! Fixtures shared by the benchmarks.

use andiff_core::dataset::{from_idx, synthetic_digits};
use andiff_core::rng::{standard_normal_vec, stream_rng};
use andiff_core::selection::DEFAULT_POOL;
use andiff_core::{make_moons, DatasetStore, DiffusionSchedule, ScheduleConfig};

pub struct Fixture {
    pub store: DatasetStore,
    pub schedule: DiffusionSchedule,
    /// Middle of the default stride.
    pub t: usize,
    pub query: Vec<f64>,
}

fn finish(store: DatasetStore, seed: u64) -> Fixture {
    let store = store.with_proxy(DEFAULT_POOL).expect("proxy");
    let schedule = ScheduleConfig::default().build().expect("default schedule");
    let t = schedule.ddim_steps()[schedule.ddim_steps().len() / 2];
    let mut rng = stream_rng(seed, 0);
    let eps = standard_normal_vec(&mut rng, store.dim());
    let query = schedule.forward_noise(store.sample(0), t, &eps).expect("query");
    Fixture { store, schedule, t, query }
}

pub fn moons(n: usize) -> Fixture {
    finish(make_moons(n, 0.05, 0).expect("moons"), 1)
}

/// Synthetic 28x28 digits, decoded exactly as an IDX file would be.
pub fn digits(n: usize) -> Fixture {
    let (images, labels) = synthetic_digits(n, 0);
    finish(from_idx(&images, Some(&labels)).expect("digits store"), 2)
}
