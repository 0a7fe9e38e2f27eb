use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use super::DatasetStore;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Noise-free position of point `j` out of `count` on one of the two moons.
///
/// Moon 0 is the upper half circle `(cos t, sin t)`; moon 1 is the lower,
/// shifted half circle `(1 - cos t, 0.5 - sin t)`, with `t` evenly spaced on
/// `[0, pi]`.
pub fn moons_locus(moon: u32, j: usize, count: usize) -> [f64; 2] {
    let theta = if count > 1 {
        PI * j as f64 / (count - 1) as f64
    } else {
        0.0
    };
    match moon {
        0 => [theta.cos(), theta.sin()],
        _ => [1.0 - theta.cos(), 0.5 - theta.sin()],
    }
}

/// Two interleaving half circles with isotropic Gaussian jitter.
///
/// The first `n / 2` points (label 0) lie on the upper moon and the remaining
/// points (label 1) on the lower moon, in order of increasing angle.
pub fn make_moons(n: usize, noise_std: f64, seed: u64) -> Result<DatasetStore> {
    if n < 2 {
        return Err(Error::Argument(format!("moons needs at least 2 points, got {n}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Argument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let n_upper = n / 2;
    let n_lower = n - n_upper;
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (moon, count) in [(0u32, n_upper), (1u32, n_lower)] {
        for j in 0..count {
            let [x, y] = moons_locus(moon, j, count);
            if noise_std > 0.0 {
                data.push(x + noise.sample(&mut rng));
                data.push(y + noise.sample(&mut rng));
            } else {
                data.push(x);
                data.push(y);
            }
            labels.push(moon);
        }
    }
    DatasetStore::from_flat(data, 2, None, Some(labels))
}
