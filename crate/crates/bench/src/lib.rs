//! Fixtures shared by the benchmarks.

use contrailseg::labels::{PolygonAnnotation, RasterConvention};
use contrailseg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in [-1, 1), reproducible per seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// A thin rotated rectangle per ring, the shape annotators draw around contrails.
pub fn contrail_annotation(size: usize, rings: usize, seed: u64) -> PolygonAnnotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let polygons = (0..rings)
        .map(|_| {
            let (cx, cy) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s));
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (half_len, half_w) = (0.3 * s, 1.5);
            let (dx, dy) = (theta.cos(), theta.sin());
            [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)]
                .iter()
                .map(|&(a, b)| [cx + a * half_len * dx - b * half_w * dy, cy + a * half_len * dy + b * half_w * dx])
                .collect()
        })
        .collect();
    PolygonAnnotation { annotator_id: 0, polygons }
}

pub const CONVENTIONS: [RasterConvention; 2] = [RasterConvention::Center, RasterConvention::Legacy];
