use andiff_core::bounds::exact_top_k;
use andiff_core::denoiser::{posterior, Support};
use andiff_core::kernel::sq_distance;
use andiff_core::rng::{standard_normal_vec, stream_rng};
use andiff_core::{
    compute_bound, make_moons, sample, sample_batch, SamplerConfig, SamplerMode, ScheduleConfig, ScheduleParams,
};
use proptest::prelude::*;

#[test]
fn golden_with_full_budgets_tracks_full_scan() {
    let store = make_moons(300, 0.05, 2).unwrap().with_proxy(4).unwrap();
    let schedule = ScheduleConfig::default().build().unwrap();
    let n = store.len();
    let everything = ScheduleParams::new(n, n, n, n, n).unwrap();
    let golden = SamplerConfig { seed: 5, schedule_params: Some(everything), ..Default::default() };
    let full = SamplerConfig { mode: SamplerMode::FullScan, ..golden.clone() };
    let a = sample(&store, &schedule, &golden, None).unwrap();
    let b = sample(&store, &schedule, &full, None).unwrap();
    assert!(sq_distance(&a.sample, &b.sample).sqrt() < 1e-9);
}

#[test]
fn class_conditioned_samples_land_near_their_class() {
    let store = make_moons(1000, 0.05, 0).unwrap().with_proxy(4).unwrap();
    let schedule = ScheduleConfig::default().build().unwrap();
    let upper = store.restrict_to_class(0).unwrap();
    let trajectories = sample_batch(&upper, &schedule, &SamplerConfig::default(), 8).unwrap();
    for t in &trajectories {
        let own = (0..upper.len()).map(|i| sq_distance(&t.sample, upper.sample(i))).fold(f64::INFINITY, f64::min);
        assert!(own < 1e-2, "sample {:?} is {own} from its class", t.sample);
    }
}

#[test]
fn audits_hold_along_golden_trajectories() {
    let store = make_moons(500, 0.05, 1).unwrap().with_proxy(4).unwrap();
    let schedule = ScheduleConfig::default().build().unwrap();
    let cfg = SamplerConfig { audit_every: 1, seed: 9, ..Default::default() };
    for t in sample_batch(&store, &schedule, &cfg, 4).unwrap() {
        for step in &t.steps {
            let d = step.audit.as_ref().unwrap();
            assert!(d.chain_holds(1e-9), "step {}: {d:?}", step.step);
            assert_eq!(d.recall_ok, Some(true));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncation_error_obeys_the_chain(seed in 0u64..10_000, n in 3usize..200, dim in 1usize..6, log_s2 in -2.0f64..2.0, frac in 0.05f64..0.95) {
        let mut rng = stream_rng(seed, 0);
        let data = standard_normal_vec(&mut rng, n * dim);
        let store = andiff_core::DatasetStore::from_flat(data, dim, None, None).unwrap();
        let q = standard_normal_vec(&mut rng, dim);
        let s2 = 10f64.powf(log_s2);
        let full = posterior(&store, &q, s2, Support::All).unwrap();
        let k = ((frac * n as f64) as usize).clamp(1, n - 1);
        let top = exact_top_k(&full.logits, k);
        let sub = posterior(&store, &q, s2, Support::Indices(&top)).unwrap().mean();
        let d = compute_bound(&full.logits, k, store.radius()).unwrap();
        let actual = sq_distance(&full.mean(), &sub).sqrt();
        prop_assert!(actual <= d.ratio_bound * (1.0 + 1e-9) + 1e-12);
        prop_assert!(d.ratio_bound <= d.bound * (1.0 + 1e-9) + 1e-12);
    }
}
