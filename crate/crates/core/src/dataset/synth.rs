//! Procedural digit-like grayscale images.
//!
//! Each class is a fixed set of pen strokes; every sample perturbs the
//! control points and applies a random affine map and stroke width before
//! rasterizing with an anti-aliased distance falloff. The result has the
//! structure coarse screening relies on (classes, smooth low-frequency
//! content, sparse bright strokes on a dark background) and is written in
//! the same IDX layout as MNIST.

use rand::Rng as _;
use rayon::prelude::*;

use super::IdxImages;
use crate::rng::stream_rng;

type Stroke = &'static [(f64, f64)];

const OVAL: [(f64, f64); 11] = [
    (0.50, 0.15),
    (0.68, 0.21),
    (0.76, 0.36),
    (0.76, 0.64),
    (0.68, 0.79),
    (0.50, 0.85),
    (0.32, 0.79),
    (0.24, 0.64),
    (0.24, 0.36),
    (0.32, 0.21),
    (0.50, 0.15),
];

const TEMPLATES: [&[Stroke]; 10] = [
    &[&OVAL],
    &[&[(0.40, 0.25), (0.52, 0.15), (0.52, 0.85)]],
    &[&[(0.30, 0.30), (0.40, 0.18), (0.60, 0.18), (0.70, 0.30), (0.65, 0.45), (0.30, 0.85), (0.75, 0.85)]],
    &[&[(0.30, 0.20), (0.65, 0.20), (0.48, 0.45), (0.70, 0.60), (0.65, 0.80), (0.30, 0.82)]],
    &[&[(0.62, 0.85), (0.62, 0.15), (0.25, 0.60), (0.78, 0.60)]],
    &[&[(0.70, 0.15), (0.36, 0.15), (0.32, 0.45), (0.60, 0.43), (0.70, 0.63), (0.60, 0.85), (0.30, 0.82)]],
    &[&[(0.65, 0.15), (0.42, 0.38), (0.32, 0.65), (0.45, 0.85), (0.65, 0.80), (0.68, 0.60), (0.50, 0.50), (0.34, 0.60)]],
    &[&[(0.25, 0.15), (0.75, 0.15), (0.45, 0.85)]],
    &[
        &[(0.50, 0.17), (0.65, 0.24), (0.65, 0.40), (0.50, 0.48), (0.35, 0.40), (0.35, 0.24), (0.50, 0.17)],
        &[(0.50, 0.48), (0.70, 0.58), (0.70, 0.78), (0.50, 0.86), (0.30, 0.78), (0.30, 0.58), (0.50, 0.48)],
    ],
    &[
        &[(0.66, 0.32), (0.55, 0.18), (0.38, 0.20), (0.33, 0.38), (0.45, 0.50), (0.66, 0.42), (0.66, 0.32)],
        &[(0.66, 0.32), (0.60, 0.85)],
    ],
];

pub const SYNTH_SIDE: usize = 28;

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

fn render(label: usize, rng: &mut crate::rng::Rng, out: &mut [u8]) {
    let side = SYNTH_SIDE as f64;
    let scale = rng.random_range(0.85..1.10);
    let angle: f64 = rng.random_range(-0.25..0.25);
    let shear = rng.random_range(-0.15..0.15);
    let (tx, ty) = (rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06));
    let width = rng.random_range(0.035..0.07);
    let peak = rng.random_range(200.0..255.0);
    let (sin, cos) = angle.sin_cos();
    let segments: Vec<((f64, f64), (f64, f64))> = TEMPLATES[label]
        .iter()
        .flat_map(|stroke| {
            let pts: Vec<(f64, f64)> = stroke
                .iter()
                .map(|&(x, y)| {
                    let x = x - 0.5 + rng.random_range(-0.03..0.03);
                    let y = y - 0.5 + rng.random_range(-0.03..0.03);
                    let x = x + shear * y;
                    let (x, y) = (scale * (cos * x - sin * y), scale * (sin * x + cos * y));
                    (x + 0.5 + tx, y + 0.5 + ty)
                })
                .collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();
    let pixel = 1.0 / side;
    for (idx, px) in out.iter_mut().enumerate() {
        let p = (
            ((idx % SYNTH_SIDE) as f64 + 0.5) / side,
            ((idx / SYNTH_SIDE) as f64 + 0.5) / side,
        );
        let d = segments
            .iter()
            .map(|&(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min);
        let coverage = ((width + 0.5 * pixel - d) / pixel).clamp(0.0, 1.0);
        *px = (peak * coverage).round() as u8;
    }
}

/// Generate `n` labelled 28x28 images. Sample `i` depends only on
/// `(seed, i)`.
pub fn synthetic_digits(n: usize, seed: u64) -> (IdxImages, Vec<u8>) {
    let area = SYNTH_SIDE * SYNTH_SIDE;
    let mut pixels = vec![0u8; n * area];
    let mut labels = vec![0u8; n];
    pixels
        .par_chunks_mut(area)
        .zip(labels.par_iter_mut())
        .enumerate()
        .for_each(|(i, (img, label))| {
            let mut rng = stream_rng(seed, i as u64);
            let class = rng.random_range(0..TEMPLATES.len());
            *label = class as u8;
            render(class, &mut rng, img);
        });
    (
        IdxImages { count: n, height: SYNTH_SIDE, width: SYNTH_SIDE, pixels },
        labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_nontrivial() {
        let (a, la) = synthetic_digits(20, 3);
        let (b, lb) = synthetic_digits(20, 3);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        for img in a.pixels.chunks(SYNTH_SIDE * SYNTH_SIDE) {
            let lit = img.iter().filter(|&&p| p > 128).count();
            assert!(lit > 20 && lit < 400, "lit pixels {lit}");
        }
        assert!(la.iter().all(|&l| l < 10));
    }

    #[test]
    fn prefix_stable() {
        let (a, _) = synthetic_digits(5, 1);
        let (b, _) = synthetic_digits(10, 1);
        assert_eq!(a.pixels[..], b.pixels[..a.pixels.len()]);
    }
}
