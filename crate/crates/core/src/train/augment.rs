use rand::Rng;

use super::config::AugmentConfig;
use crate::error::{Error, Result};
use crate::labels::{sample_bilinear, SoftMask};
use crate::tensor::Tensor;

/// Similarity transform about the image centre: rotate, scale, then shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub shift: [f64; 2],
    pub scale: f64,
    pub angle_rad: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: [0.0, 0.0], scale: 1.0, angle_rad: 0.0 };

    /// Resamples one `h×w` plane; output pixel centres are pulled back
    /// through the inverse transform and read bilinearly with edge clamp.
    pub fn warp(&self, plane: &[f32], h: usize, w: usize) -> Vec<f32> {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (s, c) = self.angle_rad.sin_cos();
        let inv = 1.0 / self.scale;
        let mut out = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let (u, v) = (j as f64 + 0.5 - cx - self.shift[0], i as f64 + 0.5 - cy - self.shift[1]);
                let sx = (c * u + s * v) * inv + cx;
                let sy = (-s * u + c * v) * inv + cy;
                out.push(sample_bilinear(plane, h, w, (sx - 0.5) as f32, (sy - 0.5) as f32));
            }
        }
        out
    }
}

fn flip_rows(plane: &mut [f32], w: usize) {
    for row in plane.chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Mirrors a `C×H×W` (or `H×W`) image left to right.
pub fn hflip_image(image: &Tensor) -> Tensor {
    let w = *image.shape().last().expect("tensors have rank >= 1");
    let mut out = image.clone();
    flip_rows(out.data_mut(), w);
    out
}

/// Applies one random shift-scale-rotate (with probability `p`) and an
/// independent horizontal flip to both arrays with shared parameters.
/// Every call consumes the same number of draws from `rng`.
pub fn augment<R: Rng>(
    image: &Tensor,
    mask: &SoftMask,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor, SoftMask)> {
    let (h, w) = match image.shape() {
        &[_, h, w] | &[h, w] => (h, w),
        s => return Err(Error::dim("augment", "rank", "2 or 3", s.len())),
    };
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::dim("augment", "mask", format!("{h}x{w}"), format!("{}x{}", mask.height(), mask.width())));
    }
    let apply_affine = rng.random::<f64>() < cfg.shift_scale_rotate_p;
    let mut sym = |limit: f64| (2.0 * rng.random::<f64>() - 1.0) * limit;
    let affine = Affine {
        shift: [sym(cfg.shift_limit) * w as f64, sym(cfg.shift_limit) * h as f64],
        scale: 1.0 + sym(cfg.scale_limit),
        angle_rad: sym(cfg.rotate_limit_deg).to_radians(),
    };
    let flip = rng.random::<f64>() < cfg.hflip_p;

    let mut img = image.clone();
    let mut m = mask.values().to_vec();
    if apply_affine {
        let warped: Vec<f32> = img.data().chunks_exact(h * w).flat_map(|p| affine.warp(p, h, w)).collect();
        img = Tensor::new(image.shape(), warped)?;
        m = affine.warp(&m, h, w);
    }
    if flip {
        flip_rows(img.data_mut(), w);
        flip_rows(&mut m, w);
    }
    // Bilinear weights can overshoot by an ulp.
    m.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok((img, SoftMask::from_values(h, w, m)?))
}
