//! Immutable training corpus.
//!
//! A [`DatasetStore`] owns a flattened `N x D` matrix of samples together
//! with per-sample norms, the data radius `R = max ||x_i||`, optional class
//! labels and an optional proxy cache used by coarse screening. Class views
//! created with [`DatasetStore::restrict_to_class`] share the underlying
//! storage and only carry a row map.

mod csv_points;
mod idx;
mod moons;
mod synth;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::proxy::{self, ProxyCache};

pub use csv_points::load_csv;
pub use idx::{from_idx, load_idx, read_idx_images, read_idx_labels, unit_to_byte, write_idx_images, write_idx_labels, IdxImages};
pub use moons::{make_moons, moons_locus};
pub use synth::{synthetic_digits, SYNTH_SIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One training record used when assembling a store by hand.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub data: Vec<f64>,
    pub label: Option<u32>,
}

/// Per-row read counters over the base storage.
#[derive(Debug)]
struct AccessCounter {
    counts: Vec<AtomicU64>,
}

#[derive(Clone, Debug)]
pub struct DatasetStore {
    data: Arc<[f64]>,
    base_len: usize,
    dim: usize,
    shape: Option<ImageShape>,
    labels: Option<Arc<[u32]>>,
    /// Local index -> base row. `None` means the identity map.
    rows: Option<Arc<[usize]>>,
    norms: Vec<f64>,
    radius: f64,
    proxy: Option<ProxyCache>,
    access: Option<Arc<AccessCounter>>,
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl DatasetStore {
    /// Build a store from a row-major `n x dim` buffer.
    pub fn from_flat(
        data: Vec<f64>,
        dim: usize,
        shape: Option<ImageShape>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("sample dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Consistency(format!(
                "buffer of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        let n = data.len() / dim;
        if n == 0 {
            return Err(Error::Precondition("dataset must contain at least one sample".into()));
        }
        if let Some(shape) = shape {
            if shape.len() != dim {
                return Err(Error::Consistency(format!(
                    "image shape {}x{}x{} does not match dimension {dim}",
                    shape.channels, shape.height, shape.width
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Consistency(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value in sample {}",
                pos / dim
            )));
        }
        let norms: Vec<f64> = data.chunks_exact(dim).map(l2_norm).collect();
        let radius = norms.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            data: data.into(),
            base_len: n,
            dim,
            shape,
            labels: labels.map(Into::into),
            rows: None,
            norms,
            radius,
            proxy: None,
            access: None,
        })
    }

    pub fn from_samples(samples: Vec<Sample>, shape: Option<ImageShape>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.data.len())
            .ok_or_else(|| Error::Precondition("dataset must contain at least one sample".into()))?;
        let labelled = samples.iter().filter(|s| s.label.is_some()).count();
        if labelled != 0 && labelled != samples.len() {
            return Err(Error::Consistency("either all or no samples must carry labels".into()));
        }
        let mut data = Vec::with_capacity(samples.len() * dim);
        let mut labels = Vec::with_capacity(if labelled > 0 { samples.len() } else { 0 });
        for (i, s) in samples.into_iter().enumerate() {
            if s.data.len() != dim {
                return Err(Error::Consistency(format!(
                    "sample {i} has dimension {}, expected {dim}",
                    s.data.len()
                )));
            }
            data.extend_from_slice(&s.data);
            if let Some(l) = s.label {
                labels.push(l);
            }
        }
        Self::from_flat(data, dim, shape, (labelled > 0).then_some(labels))
    }

    /// Number of samples visible through this store (or view).
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> Option<ImageShape> {
        self.shape
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    #[inline]
    fn base_row(&self, i: usize) -> usize {
        match &self.rows {
            Some(rows) => rows[i],
            None => i,
        }
    }

    /// Index of sample `i` in the store this view was derived from.
    pub fn original_index(&self, i: usize) -> usize {
        self.base_row(i)
    }

    pub fn original_indices(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.base_row(i)).collect()
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[f64] {
        let row = self.base_row(i);
        if let Some(access) = &self.access {
            access.counts[row].fetch_add(1, Ordering::Relaxed);
        }
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[self.base_row(i)])
    }

    pub fn labels(&self) -> Option<Vec<u32>> {
        self.labels
            .as_ref()
            .map(|l| (0..self.len()).map(|i| l[self.base_row(i)]).collect())
    }

    /// Mean of all samples, accumulated in index order.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (a, v) in acc.iter_mut().zip(self.sample(i)) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Class-conditioned view sharing the same storage.
    pub fn restrict_to_class(&self, label: u32) -> Result<Self> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Precondition("store has no labels".into()))?;
        let rows: Vec<usize> = (0..self.len())
            .map(|i| self.base_row(i))
            .filter(|&row| labels[row] == label)
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptySelection(format!("no samples with label {label}")));
        }
        Ok(self.view(rows))
    }

    /// View of the given local rows, in the given order, sharing storage.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySelection("no rows selected".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Argument(format!("row {bad} out of range for {} samples", self.len())));
        }
        Ok(self.view(indices.iter().map(|&i| self.base_row(i)).collect()))
    }

    fn view(&self, rows: Vec<usize>) -> Self {
        let norms: Vec<f64> = rows
            .iter()
            .map(|&r| l2_norm(&self.data[r * self.dim..(r + 1) * self.dim]))
            .collect();
        let radius = norms.iter().copied().fold(0.0, f64::max);
        Self {
            data: Arc::clone(&self.data),
            base_len: self.base_len,
            dim: self.dim,
            shape: self.shape,
            labels: self.labels.clone(),
            rows: Some(rows.into()),
            norms,
            radius,
            proxy: self.proxy.clone(),
            access: self.access.clone(),
        }
    }

    /// Compute and cache the screening proxy with block size `pool` per
    /// spatial axis (`pool = 4` is a 1/4 downsampling).
    pub fn build_proxy(&mut self, pool: usize) -> Result<&ProxyCache> {
        let cache = proxy::build(&self.data, self.base_len, self.dim, self.shape, pool)?;
        Ok(self.proxy.insert(cache))
    }

    pub fn with_proxy(mut self, pool: usize) -> Result<Self> {
        self.build_proxy(pool)?;
        Ok(self)
    }

    pub fn proxy_cache(&self) -> Option<&ProxyCache> {
        self.proxy.as_ref()
    }

    /// Proxy vector of sample `i`. Panics if no proxy has been built.
    #[inline]
    pub fn proxy(&self, i: usize) -> &[f64] {
        let cache = self.proxy.as_ref().expect("proxy cache not built");
        match cache.values() {
            Some(values) => {
                let d = cache.dim();
                let row = self.base_row(i);
                &values[row * d..(row + 1) * d]
            }
            None => {
                let row = self.base_row(i);
                &self.data[row * self.dim..(row + 1) * self.dim]
            }
        }
    }

    /// Start counting per-row reads. Views derived afterwards share the
    /// counters.
    pub fn enable_access_tracking(&mut self) {
        let counts = (0..self.base_len).map(|_| AtomicU64::new(0)).collect();
        self.access = Some(Arc::new(AccessCounter { counts }));
    }

    /// Read counts per base row, if tracking is enabled.
    pub fn access_counts(&self) -> Option<Vec<u64>> {
        self.access
            .as_ref()
            .map(|a| a.counts.iter().map(|c| c.load(Ordering::Relaxed)).collect())
    }

    /// Raw sample bytes in index order, for fingerprinting.
    pub fn content_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.dim * 8);
        for i in 0..self.len() {
            let row = self.base_row(i);
            for v in &self.data[row * self.dim..(row + 1) * self.dim] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Heap bytes held by sample storage and the proxy cache.
    pub fn storage_bytes(&self) -> usize {
        let proxy = self
            .proxy
            .as_ref()
            .and_then(|p| p.values().map(|v| v.len()))
            .unwrap_or(0);
        (self.data.len() + proxy + self.norms.len()) * std::mem::size_of::<f64>()
    }
}

impl PartialEq for DatasetStore {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.dim == other.dim
            && self.shape == other.shape
            && self.norms == other.norms
            && self.radius == other.radius
            && self.labels() == other.labels()
            && (0..self.len()).all(|i| {
                self.base_row(i) == other.base_row(i) && self.sample(i) == other.sample(i)
            })
    }
}

/// Recompute `R = max_i ||x_i||_2` directly from the samples.
pub fn compute_radius(store: &DatasetStore) -> Result<f64> {
    if store.is_empty() {
        return Err(Error::Precondition("radius of an empty store".into()));
    }
    Ok((0..store.len())
        .map(|i| l2_norm(store.sample(i)))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(values: &[(f64, u32)]) -> DatasetStore {
        let samples = values
            .iter()
            .map(|&(v, l)| Sample { data: vec![v], label: Some(l) })
            .collect();
        DatasetStore::from_samples(samples, None).unwrap()
    }

    #[test]
    fn radius_of_small_sets() {
        let s = DatasetStore::from_flat(vec![-1.0, 1.0, 3.0], 1, None, None).unwrap();
        assert_eq!(compute_radius(&s).unwrap(), 3.0);
        assert_eq!(s.radius(), 3.0);
        let z = DatasetStore::from_flat(vec![0.0; 6], 3, None, None).unwrap();
        assert_eq!(compute_radius(&z).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DatasetStore::from_flat(vec![], 2, None, None).is_err());
        assert!(DatasetStore::from_flat(vec![1.0, f64::NAN], 2, None, None).is_err());
        assert!(DatasetStore::from_flat(vec![1.0; 3], 2, None, None).is_err());
        assert!(DatasetStore::from_flat(vec![1.0; 4], 2, None, Some(vec![0])).is_err());
    }

    #[test]
    fn restrict_filters_and_is_idempotent() {
        let values: Vec<(f64, u32)> = (0..10)
            .map(|i| (i as f64, if i % 3 == 0 { 3 } else { 1 }))
            .collect();
        let s = labelled(&values);
        let r = s.restrict_to_class(3).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r.original_indices(), vec![0, 3, 6, 9]);
        assert_eq!(r.radius(), 9.0);
        assert!(r.labels().unwrap().iter().all(|&l| l == 3));
        let rr = r.restrict_to_class(3).unwrap();
        assert_eq!(r, rr);
    }

    #[test]
    fn restrict_errors() {
        let s = labelled(&[(0.0, 1), (1.0, 1)]);
        assert!(matches!(s.restrict_to_class(7), Err(Error::EmptySelection(_))));
        let u = DatasetStore::from_flat(vec![0.0, 1.0], 1, None, None).unwrap();
        assert!(matches!(u.restrict_to_class(0), Err(Error::Precondition(_))));
    }

    #[test]
    fn mixed_labels_rejected() {
        let samples = vec![
            Sample { data: vec![0.0], label: Some(1) },
            Sample { data: vec![1.0], label: None },
        ];
        assert!(DatasetStore::from_samples(samples, None).is_err());
    }

    #[test]
    fn select_rows_composes_with_views() {
        let values: Vec<(f64, u32)> = (0..8).map(|i| (i as f64 - 2.0, (i % 2) as u32)).collect();
        let s = labelled(&values);
        let v = s.select_rows(&[5, 1, 6]).unwrap();
        assert_eq!(v.original_indices(), vec![5, 1, 6]);
        assert_eq!(v.radius(), 4.0);
        let odd = v.restrict_to_class(1).unwrap();
        assert_eq!(odd.original_indices(), vec![5, 1]);
        assert!(matches!(s.select_rows(&[]), Err(Error::EmptySelection(_))));
        assert!(s.select_rows(&[8]).is_err());
    }

    #[test]
    fn class_view_never_reads_other_classes() {
        use crate::sampler::{sample, SamplerConfig, SamplerMode};
        use crate::schedule::ScheduleConfig;

        let mut base = make_moons(400, 0.05, 3).unwrap().with_proxy(proxy::DEFAULT_POOL).unwrap();
        base.enable_access_tracking();
        let view = base.restrict_to_class(1).unwrap();
        let schedule = ScheduleConfig::default().build().unwrap();
        for mode in [SamplerMode::Golden, SamplerMode::FullScan, SamplerMode::WssAblation] {
            let config = SamplerConfig { mode, audit_every: 1, ..SamplerConfig::default() };
            sample(&view, &schedule, &config, None).unwrap();
        }
        let counts = base.access_counts().unwrap();
        for (row, &c) in counts.iter().enumerate() {
            if base.label(row) == Some(1) {
                continue;
            }
            assert_eq!(c, 0, "row {row} outside the class was read");
        }
        assert!(counts.iter().any(|&c| c > 0));
    }
}
