//! Low-resolution proxy used by coarse screening.
//!
//! Image samples are block-mean pooled per channel; when a block size does
//! not divide the image side, the trailing block averages the pixels that
//! remain. Low-dimensional data (`D <= IDENTITY_MAX_DIM`) uses the samples
//! themselves as the proxy.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::{DatasetStore, ImageShape};
use crate::error::{check_dim, Error, Result};

pub const IDENTITY_MAX_DIM: usize = 64;
pub const DEFAULT_POOL: usize = 4;

#[derive(Clone, Debug)]
pub struct ProxyCache {
    values: Option<Arc<[f64]>>,
    dim: usize,
    pool: usize,
    shape: Option<ImageShape>,
    truncated: bool,
}

impl ProxyCache {
    /// Pooled values for every base row, or `None` for the identity proxy.
    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    pub fn is_identity(&self) -> bool {
        self.values.is_none()
    }

    /// Whether a trailing partial block was pooled on some axis.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Project a full-dimension vector into proxy space.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match (self.values.is_some(), self.shape) {
            (true, Some(shape)) => pool_image(x, shape, self.pool),
            _ => x.to_vec(),
        }
    }
}

fn pooled_side(side: usize, pool: usize) -> usize {
    side.div_ceil(pool)
}

/// Block-mean pooling of one `channels x height x width` image.
pub fn pool_image(x: &[f64], shape: ImageShape, pool: usize) -> Vec<f64> {
    let (ph, pw) = (pooled_side(shape.height, pool), pooled_side(shape.width, pool));
    let mut out = Vec::with_capacity(shape.channels * ph * pw);
    for c in 0..shape.channels {
        let plane = &x[c * shape.height * shape.width..(c + 1) * shape.height * shape.width];
        for by in 0..ph {
            let rows = by * pool..((by + 1) * pool).min(shape.height);
            for bx in 0..pw {
                let cols = bx * pool..((bx + 1) * pool).min(shape.width);
                let mut sum = 0.0;
                for y in rows.clone() {
                    sum += plane[y * shape.width + cols.start..y * shape.width + cols.end]
                        .iter()
                        .sum::<f64>();
                }
                out.push(sum / (rows.len() * cols.len()) as f64);
            }
        }
    }
    out
}

pub(crate) fn build(
    data: &[f64],
    n: usize,
    dim: usize,
    shape: Option<ImageShape>,
    pool: usize,
) -> Result<ProxyCache> {
    if pool == 0 {
        return Err(Error::Argument("pooling block size must be >= 1".into()));
    }
    if dim <= IDENTITY_MAX_DIM {
        return Ok(ProxyCache { values: None, dim, pool, shape, truncated: false });
    }
    let shape = shape.ok_or_else(|| {
        Error::Precondition(format!(
            "proxy for {dim}-dimensional data needs an image shape"
        ))
    })?;
    let d = shape.channels * pooled_side(shape.height, pool) * pooled_side(shape.width, pool);
    let mut values = vec![0.0; n * d];
    values
        .par_chunks_mut(d)
        .zip(data.par_chunks(dim))
        .for_each(|(out, x)| out.copy_from_slice(&pool_image(x, shape, pool)));
    Ok(ProxyCache {
        values: Some(values.into()),
        dim: d,
        pool,
        shape: Some(shape),
        truncated: shape.height % pool != 0 || shape.width % pool != 0,
    })
}

/// Project a query with the store's proxy.
pub fn project_query(store: &DatasetStore, x: &[f64]) -> Result<Vec<f64>> {
    check_dim("query", store.dim(), x.len())?;
    let cache = store
        .proxy_cache()
        .ok_or_else(|| Error::Precondition("proxy cache not built".into()))?;
    Ok(cache.project(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_pool(x: &[f64], h: usize, w: usize, pool: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mut by = 0;
        while by < h {
            let mut bx = 0;
            while bx < w {
                let mut vals = Vec::new();
                for y in by..(by + pool).min(h) {
                    for xx in bx..(bx + pool).min(w) {
                        vals.push(x[y * w + xx]);
                    }
                }
                out.push(vals.iter().sum::<f64>() / vals.len() as f64);
                bx += pool;
            }
            by += pool;
        }
        out
    }

    #[test]
    fn constant_block() {
        let shape = ImageShape { channels: 1, height: 4, width: 4 };
        assert_eq!(pool_image(&[1.0; 16], shape, 4), vec![1.0]);
    }

    #[test]
    fn mnist_sized_matches_naive_loop() {
        let shape = ImageShape { channels: 1, height: 28, width: 28 };
        let x: Vec<f64> = (0..784).map(|i| ((i * 7919) % 255) as f64 / 127.5 - 1.0).collect();
        let pooled = pool_image(&x, shape, 4);
        assert_eq!(pooled.len(), 49);
        let oracle = naive_pool(&x, 28, 28, 4);
        for (a, b) in pooled.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn truncated_trailing_block() {
        let shape = ImageShape { channels: 1, height: 10, width: 10 };
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let pooled = pool_image(&x, shape, 4);
        assert_eq!(pooled.len(), 9);
        assert_eq!(pooled, naive_pool(&x, 10, 10, 4));
        let store = DatasetStore::from_flat(x, 100, Some(shape), None)
            .unwrap()
            .with_proxy(4)
            .unwrap();
        assert!(store.proxy_cache().unwrap().truncated());
    }

    #[test]
    fn low_dim_is_identity() {
        let store = DatasetStore::from_flat(vec![0.5, -0.25, 1.0, 2.0], 2, None, None)
            .unwrap()
            .with_proxy(4)
            .unwrap();
        assert!(store.proxy_cache().unwrap().is_identity());
        assert_eq!(store.proxy(1), &[1.0, 2.0]);
        assert_eq!(project_query(&store, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn high_dim_without_shape_rejected() {
        let mut store = DatasetStore::from_flat(vec![0.0; 130], 65, None, None).unwrap();
        assert!(matches!(store.build_proxy(4), Err(Error::Precondition(_))));
    }
}
