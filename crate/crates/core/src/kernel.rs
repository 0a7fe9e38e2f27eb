//! Dense vector primitives shared by the hot loops.

/// Squared Euclidean distance with four independent partial sums.
#[inline]
pub fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            let d = x[j] - y[j];
            acc[j] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y = scale * y + w * x`
#[inline]
pub fn scale_add(y: &mut [f64], scale: f64, w: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = scale * *yi + w * xi;
    }
}

/// `y += w * x`
#[inline]
pub fn axpy(y: &mut [f64], w: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += w * xi;
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    sq_distance(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_naive(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 0..40)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            prop_assert!((sq_distance(&a, &b) - naive).abs() <= 1e-12 * naive.max(1.0));
        }
    }
}
