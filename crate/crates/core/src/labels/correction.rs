//! Sub-pixel image resampling and the misalignment correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shift applied to images (never to masks), in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectionConfig {
    pub shift_x: f32,
    pub shift_y: f32,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self { shift_x: 0.5, shift_y: 0.5 }
    }
}

/// Bilinear read at fractional index coordinates, clamped to the edge.
#[inline]
pub fn sample_bilinear(plane: &[f32], height: usize, width: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
    let bot = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resamples every plane of a `C×H×W` (or `H×W`) image so that output
/// pixel `(x, y)` reads the source at `(x + dx, y + dy)`.
pub fn shift_image(image: &Tensor, dx: f32, dy: f32) -> Result<Tensor> {
    let (h, w) = match image.shape() {
        &[_, h, w] | &[h, w] => (h, w),
        s => return Err(Error::dim("shift_image", "rank", "2 or 3", s.len())),
    };
    let mut out = Vec::with_capacity(image.numel());
    for plane in image.data().chunks_exact(h * w) {
        for y in 0..h {
            for x in 0..w {
                out.push(sample_bilinear(plane, h, w, x as f32 + dx, y as f32 + dy));
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Realigns an image with masks drawn under the legacy convention.
pub fn misalignment_correct(image: &Tensor, cfg: &CorrectionConfig) -> Result<Tensor> {
    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Value("misalignment_correct needs a finite image".into()));
    }
    shift_image(image, cfg.shift_x, cfg.shift_y)
}
