//! Coarse-to-fine support selection.
//!
//! At each sampling step the candidate pool `C_t` holds the `m_t` samples
//! closest to the rescaled query `x_t / sqrt(alpha_t)` in proxy space; the
//! golden set `S_t` holds the `k_t` candidates with the largest exact
//! denoiser logits. `m_t` grows and `k_t` shrinks as the noise level `g`
//! falls. Every ordering breaks ties by the lowest sample index.

pub mod proxy;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetStore;
use crate::error::{check_dim, Error, Result};
use crate::kernel::sq_distance;
use crate::schedule::DiffusionSchedule;

pub use proxy::{pool_image, project_query, ProxyCache, DEFAULT_POOL};

/// Candidate and support budgets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub m_min: usize,
    pub m_max: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl ScheduleParams {
    pub fn new(n: usize, m_min: usize, m_max: usize, k_min: usize, k_max: usize) -> Result<Self> {
        if !(1 <= m_min && m_min <= m_max && m_max <= n) {
            return Err(Error::Argument(format!(
                "need 1 <= m_min <= m_max <= N, got m_min = {m_min}, m_max = {m_max}, N = {n}"
            )));
        }
        if !(1 <= k_min && k_min <= k_max && k_max <= n) {
            return Err(Error::Argument(format!(
                "need 1 <= k_min <= k_max <= N, got k_min = {k_min}, k_max = {k_max}, N = {n}"
            )));
        }
        Ok(Self { m_min, m_max, k_min, k_max })
    }

    /// `m_min = k_max = N/10`, `m_max = N/4`, `k_min = N/20`, each at
    /// least 1.
    pub fn defaults_for(n: usize) -> Self {
        let tenth = (n / 10).max(1);
        Self { m_min: tenth, m_max: (n / 4).max(1), k_min: (n / 20).max(1), k_max: tenth }
    }

    pub fn m_of_t(&self, g: f64) -> usize {
        m_of_t(self, g)
    }

    pub fn k_of_t(&self, g: f64) -> usize {
        k_of_t(self, g)
    }

    /// Check `k_t <= m_t` on every step of the sampling stride.
    pub fn validate_for(&self, schedule: &DiffusionSchedule) -> Result<()> {
        for &t in schedule.ddim_steps() {
            let g = schedule.g(t);
            let (m, k) = (self.m_of_t(g), self.k_of_t(g));
            if k > m {
                return Err(Error::Consistency(format!(
                    "k_t = {k} exceeds m_t = {m} at step t = {t} (g = {g})"
                )));
            }
        }
        Ok(())
    }
}

/// Candidate pool size: `floor(m_min + (m_max - m_min) (1 - g))`.
pub fn m_of_t(params: &ScheduleParams, g: f64) -> usize {
    let span = (params.m_max - params.m_min) as f64;
    (params.m_min as f64 + span * (1.0 - g)).floor() as usize
}

/// Golden set size: `floor(k_min + (k_max - k_min) g)`.
pub fn k_of_t(params: &ScheduleParams, g: f64) -> usize {
    let span = (params.k_max - params.k_min) as f64;
    (params.k_min as f64 + span * g).floor() as usize
}

/// A size given either as a fraction of `N` or as an absolute count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SizeSpec {
    Fraction(f64),
    Count(usize),
}

impl SizeSpec {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            SizeSpec::Fraction(f) => ((f * n as f64).floor() as usize).max(1),
            SizeSpec::Count(c) => c,
        }
    }
}

impl std::str::FromStr for SizeSpec {
    type Err = String;

    /// `"0.1"` or `"1/10"` is a fraction, `"500"` a count.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            let num: f64 = num.trim().parse().map_err(|_| format!("bad fraction {s:?}"))?;
            let den: f64 = den.trim().parse().map_err(|_| format!("bad fraction {s:?}"))?;
            if den <= 0.0 {
                return Err(format!("bad fraction {s:?}"));
            }
            return Ok(SizeSpec::Fraction(num / den));
        }
        if let Ok(c) = s.parse::<usize>() {
            return Ok(SizeSpec::Count(c));
        }
        match s.parse::<f64>() {
            Ok(f) if f > 0.0 && f <= 1.0 => Ok(SizeSpec::Fraction(f)),
            _ => Err(format!("expected a count or a fraction in (0, 1], got {s:?}")),
        }
    }
}

/// Output of the proxy screen.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    /// Candidate indices in ascending order.
    pub indices: Vec<usize>,
    /// Squared proxy distance of each candidate, aligned with `indices`.
    pub proxy_sq_distances: Vec<f64>,
    /// Set when the requested pool exceeded `N`.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoldenSelection {
    pub step: usize,
    pub g: f64,
    pub m_t: usize,
    pub k_t: usize,
    pub candidates: Vec<usize>,
    pub proxy_sq_distances: Vec<f64>,
    /// Exact logit of each candidate, aligned with `candidates`.
    pub candidate_logits: Vec<f64>,
    /// Golden indices in ascending order.
    pub golden: Vec<usize>,
    pub golden_logits: Vec<f64>,
    pub clamped_m: bool,
    pub clamped_k: bool,
}

/// Per-step selection diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionSummary {
    pub min_logit_in_golden: f64,
    pub max_logit: f64,
    /// Best candidate logit minus the best excluded candidate logit;
    /// infinite when nothing inside the pool was excluded.
    pub logit_gap: f64,
}

impl GoldenSelection {
    pub fn summary(&self) -> SelectionSummary {
        let max_logit = self.candidate_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_in = self.golden_logits.iter().copied().fold(f64::INFINITY, f64::min);
        let mut in_golden = vec![false; self.candidates.len()];
        let mut gi = 0;
        for (ci, &c) in self.candidates.iter().enumerate() {
            if gi < self.golden.len() && self.golden[gi] == c {
                in_golden[ci] = true;
                gi += 1;
            }
        }
        let excluded = self
            .candidate_logits
            .iter()
            .zip(&in_golden)
            .filter(|(_, &g)| !g)
            .map(|(&l, _)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        SelectionSummary { min_logit_in_golden: min_in, max_logit, logit_gap: max_logit - excluded }
    }

    /// Selection that keeps every sample; used by full-scan audits.
    pub fn everything(store: &DatasetStore, schedule: &DiffusionSchedule, query: &[f64], t: usize) -> Result<Self> {
        let all = Candidates {
            indices: (0..store.len()).collect(),
            proxy_sq_distances: vec![0.0; store.len()],
            clamped: false,
        };
        golden_select(store, schedule, query, t, &all, store.len())
    }
}

/// Order by ascending key, then ascending index.
#[inline]
fn ascending(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `m` smallest `(key, index)` pairs, sorted by key then index.
pub fn top_m_smallest(mut items: Vec<(f64, usize)>, m: usize) -> Vec<(f64, usize)> {
    if m == 0 {
        return Vec::new();
    }
    if m < items.len() {
        items.select_nth_unstable_by(m - 1, ascending);
        items.truncate(m);
    }
    items.sort_unstable_by(ascending);
    items
}

/// Merge two partial top-`m` lists (each sorted) into the top-`m` of their
/// union. Associative and commutative.
pub fn merge_top_m(a: &[(f64, usize)], b: &[(f64, usize)], m: usize) -> Vec<(f64, usize)> {
    let mut out = Vec::with_capacity(m.min(a.len() + b.len()));
    let (mut i, mut j) = (0, 0);
    while out.len() < m && (i < a.len() || j < b.len()) {
        let take_a = j >= b.len() || (i < a.len() && ascending(&a[i], &b[j]) != Ordering::Greater);
        if take_a {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out
}

pub fn scaled_query(query: &[f64], alpha: f64) -> Vec<f64> {
    let inv = 1.0 / alpha.sqrt();
    query.iter().map(|v| v * inv).collect()
}

/// Keep the `m` samples whose proxies are closest to the projected,
/// rescaled query.
pub fn coarse_screen(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    query: &[f64],
    t: usize,
    m: usize,
) -> Result<Candidates> {
    check_dim("query", store.dim(), query.len())?;
    schedule.check_step(t)?;
    let projected = project_query(store, &scaled_query(query, schedule.alpha(t)))?;
    Ok(screen_projected(store, &projected, m))
}

pub(crate) fn screen_projected(store: &DatasetStore, projected: &[f64], m: usize) -> Candidates {
    let n = store.len();
    let clamped = m > n;
    let m = m.min(n);
    let dists: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| (sq_distance(projected, store.proxy(i)), i))
        .collect();
    let mut kept = top_m_smallest(dists, m);
    kept.sort_unstable_by_key(|&(_, i)| i);
    Candidates {
        indices: kept.iter().map(|&(_, i)| i).collect(),
        proxy_sq_distances: kept.iter().map(|&(d, _)| d).collect(),
        clamped,
    }
}

/// Score the candidates with exact logits and keep the `k` best.
pub fn golden_select(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    query: &[f64],
    t: usize,
    candidates: &Candidates,
    k: usize,
) -> Result<GoldenSelection> {
    check_dim("query", store.dim(), query.len())?;
    schedule.check_step(t)?;
    let scaled = scaled_query(query, schedule.alpha(t));
    Ok(refine(store, &scaled, schedule.sigma_sq(t), candidates, k, t, schedule.g(t)))
}

pub(crate) fn refine(
    store: &DatasetStore,
    scaled: &[f64],
    sigma_sq: f64,
    candidates: &Candidates,
    k: usize,
    step: usize,
    g: f64,
) -> GoldenSelection {
    let two_sigma_sq = 2.0 * sigma_sq;
    let logits: Vec<f64> = candidates
        .indices
        .par_iter()
        .with_min_len(256)
        .map(|&i| -sq_distance(scaled, store.sample(i)) / two_sigma_sq)
        .collect();
    let clamped_k = k > candidates.indices.len();
    let k = k.min(candidates.indices.len());
    // negate so that "smallest" means largest logit
    let keyed: Vec<(f64, usize)> = logits
        .iter()
        .zip(&candidates.indices)
        .map(|(&l, &i)| (-l, i))
        .collect();
    let mut best = top_m_smallest(keyed, k);
    best.sort_unstable_by_key(|&(_, i)| i);
    GoldenSelection {
        step,
        g,
        m_t: candidates.indices.len(),
        k_t: k,
        candidates: candidates.indices.clone(),
        proxy_sq_distances: candidates.proxy_sq_distances.clone(),
        candidate_logits: logits,
        golden: best.iter().map(|&(_, i)| i).collect(),
        golden_logits: best.iter().map(|&(nl, _)| -nl).collect(),
        clamped_m: candidates.clamped,
        clamped_k,
    }
}

/// Full pipeline for one step: budgets from `g(sigma_t)`, proxy screen,
/// exact refinement. `k_t` is clamped to `m_t`.
pub fn select(
    store: &DatasetStore,
    schedule: &DiffusionSchedule,
    params: &ScheduleParams,
    query: &[f64],
    t: usize,
) -> Result<GoldenSelection> {
    check_dim("query", store.dim(), query.len())?;
    schedule.check_step(t)?;
    let g = schedule.g(t);
    let m = params.m_of_t(g);
    let k = params.k_of_t(g).min(m);
    let scaled = scaled_query(query, schedule.alpha(t));
    let projected = project_query(store, &scaled)?;
    let candidates = screen_projected(store, &projected, m);
    Ok(refine(store, &scaled, schedule.sigma_sq(t), &candidates, k, t, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream_rng};
    use proptest::prelude::*;

    fn params(m_min: usize, m_max: usize, k_min: usize, k_max: usize) -> ScheduleParams {
        ScheduleParams { m_min, m_max, k_min, k_max }
    }

    #[test]
    fn schedule_endpoints_and_arithmetic() {
        let p = params(100, 250, 50, 100);
        assert_eq!(m_of_t(&p, 1.0), 100);
        assert_eq!(m_of_t(&p, 0.0), 250);
        assert_eq!(m_of_t(&p, 0.5), 175);
        assert_eq!(k_of_t(&p, 0.0), 50);
        assert_eq!(k_of_t(&p, 1.0), 100);
        assert_eq!(k_of_t(&p, 0.3), 65);
    }

    #[test]
    fn defaults_match_fractions() {
        let p = ScheduleParams::defaults_for(2000);
        assert_eq!(p, params(200, 500, 100, 200));
        let tiny = ScheduleParams::defaults_for(3);
        assert!(tiny.k_min >= 1 && tiny.m_min >= 1);
        let schedule = crate::schedule::ScheduleConfig::default().build().unwrap();
        p.validate_for(&schedule).unwrap();
        assert!(params(10, 20, 5, 30).validate_for(&schedule).is_err());
    }

    #[test]
    fn param_validation() {
        assert!(ScheduleParams::new(100, 0, 10, 1, 5).is_err());
        assert!(ScheduleParams::new(100, 20, 10, 1, 5).is_err());
        assert!(ScheduleParams::new(100, 10, 101, 1, 5).is_err());
        assert!(ScheduleParams::new(100, 10, 20, 6, 5).is_err());
        assert!(ScheduleParams::new(100, 10, 20, 1, 5).is_ok());
    }

    #[test]
    fn size_spec_parsing() {
        assert_eq!("0.25".parse::<SizeSpec>().unwrap(), SizeSpec::Fraction(0.25));
        assert_eq!("1/4".parse::<SizeSpec>().unwrap(), SizeSpec::Fraction(0.25));
        assert_eq!("500".parse::<SizeSpec>().unwrap(), SizeSpec::Count(500));
        assert!("abc".parse::<SizeSpec>().is_err());
        assert!("1.5".parse::<SizeSpec>().is_err());
        assert_eq!(SizeSpec::Fraction(0.1).resolve(2000), 200);
        assert_eq!(SizeSpec::Fraction(0.1).resolve(5), 1);
    }

    fn one_d() -> (DatasetStore, DiffusionSchedule) {
        let store = DatasetStore::from_flat(vec![-1.0, 1.0, 3.0], 1, None, None)
            .unwrap()
            .with_proxy(4)
            .unwrap();
        // alpha = 0.5 gives sigma^2 = 1
        let schedule = DiffusionSchedule::from_alphas(vec![0.5], vec![0]).unwrap();
        (store, schedule)
    }

    #[test]
    fn one_d_top_two() {
        let (store, schedule) = one_d();
        let all = coarse_screen(&store, &schedule, &[0.0], 0, 3).unwrap();
        assert_eq!(all.indices, vec![0, 1, 2]);
        let sel = golden_select(&store, &schedule, &[0.0], 0, &all, 2).unwrap();
        assert_eq!(sel.golden, vec![0, 1]);
        assert_eq!(sel.candidate_logits, vec![-0.5, -0.5, -4.5]);
        let s = sel.summary();
        assert_eq!(s.max_logit, -0.5);
        assert_eq!(s.min_logit_in_golden, -0.5);
        assert_eq!(s.logit_gap, 4.0);
    }

    #[test]
    fn singleton_and_clamping() {
        let (store, schedule) = one_d();
        let one = Candidates { indices: vec![2], proxy_sq_distances: vec![0.0], clamped: false };
        let sel = golden_select(&store, &schedule, &[0.0], 0, &one, 1).unwrap();
        assert_eq!(sel.golden, vec![2]);
        let sel = golden_select(&store, &schedule, &[0.0], 0, &one, 4).unwrap();
        assert!(sel.clamped_k);
        assert_eq!(sel.k_t, 1);
        let c = coarse_screen(&store, &schedule, &[0.0], 0, 10).unwrap();
        assert!(c.clamped);
        assert_eq!(c.indices.len(), 3);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let store = DatasetStore::from_flat(vec![1.0, -1.0, 1.0, -1.0], 1, None, None)
            .unwrap()
            .with_proxy(4)
            .unwrap();
        let schedule = DiffusionSchedule::from_alphas(vec![0.5], vec![0]).unwrap();
        let c = coarse_screen(&store, &schedule, &[0.0], 0, 3).unwrap();
        assert_eq!(c.indices, vec![0, 1, 2]);
        let sel = golden_select(&store, &schedule, &[0.0], 0, &c, 1).unwrap();
        assert_eq!(sel.golden, vec![0]);
    }

    #[test]
    fn screen_matches_exhaustive_sort() {
        let mut rng = stream_rng(5, 0);
        let data = standard_normal_vec(&mut rng, 20);
        let store = DatasetStore::from_flat(data, 2, None, None).unwrap().with_proxy(4).unwrap();
        let schedule = crate::schedule::ScheduleConfig::default().build().unwrap();
        let t = 444;
        let q = standard_normal_vec(&mut rng, 2);
        let c = coarse_screen(&store, &schedule, &q, t, 3).unwrap();
        let sa = schedule.alpha(t).sqrt();
        let scaled: Vec<f64> = q.iter().map(|v| v / sa).collect();
        let mut all: Vec<(f64, usize)> = (0..10)
            .map(|i| {
                let x = store.sample(i);
                ((scaled[0] - x[0]).powi(2) + (scaled[1] - x[1]).powi(2), i)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut expected: Vec<usize> = all[..3].iter().map(|p| p.1).collect();
        expected.sort();
        assert_eq!(c.indices, expected);
    }

    #[test]
    fn training_sample_recalled_at_low_noise() {
        let store = crate::dataset::make_moons(200, 0.05, 1).unwrap().with_proxy(4).unwrap();
        let schedule = crate::schedule::ScheduleConfig::default().build().unwrap();
        let p = ScheduleParams::defaults_for(store.len());
        for j in [0, 57, 199] {
            let q: Vec<f64> = store.sample(j).iter().map(|v| v * schedule.alpha(0).sqrt()).collect();
            let sel = select(&store, &schedule, &p, &q, 0).unwrap();
            assert_eq!(sel.g, 0.0);
            assert!(sel.golden.contains(&j));
        }
    }

    proptest! {
        #[test]
        fn merge_is_top_of_union(
            a in prop::collection::vec((0u8..20, 0usize..1000), 0..30),
            b in prop::collection::vec((0u8..20, 0usize..1000), 0..30),
            m in 1usize..40,
        ) {
            let a: Vec<(f64, usize)> = a.into_iter().map(|(k, i)| (k as f64, i)).collect();
            let b: Vec<(f64, usize)> = b.into_iter().map(|(k, i)| (k as f64, i + 1000)).collect();
            let ta = top_m_smallest(a.clone(), m);
            let tb = top_m_smallest(b.clone(), m);
            let union: Vec<_> = a.into_iter().chain(b).collect();
            prop_assert_eq!(merge_top_m(&ta, &tb, m), top_m_smallest(union, m));
            prop_assert_eq!(merge_top_m(&ta, &tb, m), merge_top_m(&tb, &ta, m));
        }

        #[test]
        fn counter_monotone(g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0, n in 20usize..100_000) {
            let p = ScheduleParams::defaults_for(n);
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(p.m_of_t(lo) >= p.m_of_t(hi));
            prop_assert!(p.k_of_t(lo) <= p.k_of_t(hi));
        }
    }
}
