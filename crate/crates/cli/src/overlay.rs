use std::path::Path;

use contrailseg::{HardMask, Tensor};
use image::{Rgb, RgbImage};

use crate::error::CliError;

/// Output pixels per input pixel.
const ZOOM: u32 = 4;
const PRED: Rgb<u8> = Rgb([255, 40, 40]);
const TRUTH: Rgb<u8> = Rgb([40, 220, 40]);
const BOTH: Rgb<u8> = Rgb([255, 230, 40]);

/// Set pixels with at least one unset (or out-of-image) 4-neighbour.
fn boundary(m: &HardMask) -> Vec<bool> {
    let (h, w) = (m.height(), m.width());
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) {
                continue;
            }
            let edge = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
            out[r * w + c] = edge || !m.get(r - 1, c) || !m.get(r + 1, c) || !m.get(r, c - 1) || !m.get(r, c + 1);
        }
    }
    out
}

/// The first image channel in grey (min-max stretched), with the truth and
/// prediction outlines drawn over it.
pub fn render(image: &Tensor, pred: &HardMask, truth: Option<&HardMask>) -> RgbImage {
    let (h, w) = (pred.height(), pred.width());
    let plane = &image.data()[..h * w];
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pb = boundary(pred);
    let tb = truth.map(boundary).unwrap_or_else(|| vec![false; h * w]);
    RgbImage::from_fn(w as u32 * ZOOM, h as u32 * ZOOM, |x, y| {
        let p = (y / ZOOM) as usize * w + (x / ZOOM) as usize;
        match (pb[p], tb[p]) {
            (true, true) => BOTH,
            (true, false) => PRED,
            (false, true) => TRUTH,
            _ => {
                let g = (((plane[p] - lo) / span) * 255.0).round() as u8;
                Rgb([g, g, g])
            }
        }
    })
}

pub fn save(path: &Path, img: &RgbImage) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
