//! Component-level contrail validity rules: minimum area, elongation, and
//! persistence across consecutive frames.

use serde::{Deserialize, Serialize};

use super::mask::HardMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidityConfig {
    pub min_pixels: usize,
    pub min_aspect: f64,
    pub min_frames: usize,
    /// IoU a component must exceed to match one in an adjacent frame.
    pub match_iou: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self { min_pixels: 10, min_aspect: 3.0, min_frames: 2, match_iou: 0.1 }
    }
}

/// How a component relates to the previous frame. Reported, never used to
/// reject.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Appearance {
    /// matched in the previous frame
    Continuing,
    /// new this frame and touching the image border
    EntersFromEdge,
    /// new this frame, away from the border
    Abrupt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub frame: usize,
    pub component: usize,
    pub area: usize,
    pub aspect: f64,
    pub passes_area: bool,
    pub passes_aspect: bool,
    /// `None` when the sequence is shorter than `min_frames`.
    pub passes_temporal: Option<bool>,
    pub appearance: Appearance,
    pub kept: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub components: Vec<ComponentReport>,
}

impl ValidityReport {
    pub fn kept(&self) -> usize {
        self.components.iter().filter(|c| c.kept).count()
    }
}

/// One 8-connected foreground component, pixels as `(row, col)` in scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
}

/// Labels 8-connected foreground components in raster-scan order.
pub fn connected_components(mask: &HardMask) -> Vec<Component> {
    let (h, w) = (mask.height(), mask.width());
    let mut label = vec![usize::MAX; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.values()[start] == 0 || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut pixels = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            pixels.push((r, c));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if mask.values()[q] != 0 && label[q] == usize::MAX {
                        label[q] = id;
                        stack.push(q);
                    }
                }
            }
        }
        pixels.sort_unstable();
        out.push(Component { pixels });
    }
    out
}

/// Pixel extent along the major principal axis divided by the extent
/// along the minor one. Extents count pixels (`max - min + 1`).
pub fn pca_aspect(pixels: &[(usize, usize)]) -> f64 {
    let n = pixels.len() as f64;
    if pixels.is_empty() {
        return 0.0;
    }
    let (mx, my) = pixels.iter().fold((0.0, 0.0), |(sx, sy), &(r, c)| (sx + c as f64, sy + r as f64));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(r, c) in pixels {
        let (dx, dy) = (c as f64 - mx, r as f64 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (u, v) = ((theta.cos(), theta.sin()), (-theta.sin(), theta.cos()));
    let extent = |axis: (f64, f64)| {
        let (lo, hi) = pixels.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &(r, c)| {
            let p = c as f64 * axis.0 + r as f64 * axis.1;
            (lo.min(p), hi.max(p))
        });
        hi - lo + 1.0
    };
    extent(u) / extent(v)
}

fn iou(a: &Component, b: &Component) -> f64 {
    // both pixel lists are sorted
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.pixels.len() && j < b.pixels.len() {
        match a.pixels[i].cmp(&b.pixels[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.pixels.len() + b.pixels.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn touches_border(c: &Component, h: usize, w: usize) -> bool {
    c.pixels.iter().any(|&(r, col)| r == 0 || col == 0 || r + 1 == h || col + 1 == w)
}

/// Keeps only components satisfying every rule; returns the filtered
/// masks and a per-component report.
pub fn validity_filter(masks: &[HardMask], cfg: &ValidityConfig) -> Result<(Vec<HardMask>, ValidityReport)> {
    let first = masks.first().ok_or_else(|| Error::Usage("validity_filter needs at least one frame".into()))?;
    for (i, m) in masks.iter().enumerate() {
        if !m.same_shape(first) {
            return Err(Error::dim(
                "validity_filter",
                format!("frame {i}"),
                format!("{}x{}", first.height(), first.width()),
                format!("{}x{}", m.height(), m.width()),
            ));
        }
    }
    let (h, w) = (first.height(), first.width());
    let comps: Vec<Vec<Component>> = masks.iter().map(connected_components).collect();
    let stats: Vec<Vec<(usize, f64, bool, bool)>> = comps
        .iter()
        .map(|fc| {
            fc.iter()
                .map(|c| {
                    let area = c.pixels.len();
                    let aspect = pca_aspect(&c.pixels);
                    (area, aspect, area >= cfg.min_pixels, aspect >= cfg.min_aspect)
                })
                .collect()
        })
        .collect();
    let static_ok = |f: usize, i: usize| stats[f][i].2 && stats[f][i].3;

    // Match graph between adjacent frames, restricted to statically valid
    // components so that filtering is idempotent.
    let frames = masks.len();
    let matches = |f: usize, i: usize, g: usize| -> Vec<usize> {
        (0..comps[g].len()).filter(|&j| static_ok(g, j) && iou(&comps[f][i], &comps[g][j]) > cfg.match_iou).collect()
    };
    // longest chain of matches ending at / starting from each component
    let mut back: Vec<Vec<usize>> = comps.iter().map(|fc| vec![1; fc.len()]).collect();
    for f in 1..frames {
        for i in 0..comps[f].len() {
            if static_ok(f, i) {
                back[f][i] = 1 + matches(f, i, f - 1).iter().map(|&j| back[f - 1][j]).max().unwrap_or(0);
            }
        }
    }
    let mut fwd: Vec<Vec<usize>> = comps.iter().map(|fc| vec![1; fc.len()]).collect();
    for f in (0..frames.saturating_sub(1)).rev() {
        for i in 0..comps[f].len() {
            if static_ok(f, i) {
                fwd[f][i] = 1 + matches(f, i, f + 1).iter().map(|&j| fwd[f + 1][j]).max().unwrap_or(0);
            }
        }
    }

    let temporal_applies = frames >= cfg.min_frames;
    let mut report = ValidityReport::default();
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut kept_mask = HardMask::zeros(h, w);
        for (i, c) in comps[f].iter().enumerate() {
            let (area, aspect, passes_area, passes_aspect) = stats[f][i];
            let passes_temporal = temporal_applies.then(|| back[f][i] + fwd[f][i] > cfg.min_frames);
            let kept = passes_area && passes_aspect && passes_temporal.unwrap_or(true);
            let continuing = f > 0 && comps[f - 1].iter().any(|p| iou(c, p) > cfg.match_iou);
            let appearance = if continuing {
                Appearance::Continuing
            } else if touches_border(c, h, w) {
                Appearance::EntersFromEdge
            } else {
                Appearance::Abrupt
            };
            if kept {
                for &(r, col) in &c.pixels {
                    kept_mask.set(r, col, true);
                }
            }
            report.components.push(ComponentReport {
                frame: f,
                component: i,
                area,
                aspect,
                passes_area,
                passes_aspect,
                passes_temporal,
                appearance,
                kept,
            });
        }
        out.push(kept_mask);
    }
    Ok((out, report))
}
