use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::labels::{AnnotationSet, PolygonAnnotation, RasterConvention, Ring};
use crate::tensor::Tensor;

/// Closed interval `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T: Copy + PartialOrd> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    fn ordered(&self) -> bool {
        self.min <= self.max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub image_size: usize,
    pub channels: usize,
    pub frames_per_sample: usize,
    pub contrails_per_scene: Range<usize>,
    pub contrail_width: Range<f64>,
    pub contrail_length: Range<f64>,
    /// Peak brightness added on the contrail core.
    pub contrail_intensity: Range<f64>,
    /// Largest displacement of a contrail between consecutive frames (px).
    pub drift: f64,
    pub background_amplitude: f64,
    pub pixel_noise: f64,
    pub annotators: usize,
    pub annotator_jitter: f64,
    pub annotator_miss_probability: f64,
    pub convention: RasterConvention,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 1,
            frames_per_sample: 2,
            contrails_per_scene: Range::new(1, 3),
            contrail_width: Range::new(1.5, 3.0),
            contrail_length: Range::new(20.0, 48.0),
            contrail_intensity: Range::new(0.35, 0.8),
            drift: 0.75,
            background_amplitude: 0.3,
            pixel_noise: 0.05,
            // Odd, so no pixel ties: the majority mask is exactly the soft mask above 0.5.
            annotators: 5,
            annotator_jitter: 1.0,
            annotator_miss_probability: 0.05,
            convention: RasterConvention::Legacy,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// One bright, wide contrail on a quiet background.
    pub fn easy() -> Self {
        Self {
            contrails_per_scene: Range::new(1, 1),
            contrail_width: Range::new(3.0, 4.0),
            contrail_length: Range::new(30.0, 48.0),
            contrail_intensity: Range::new(1.0, 1.0),
            background_amplitude: 0.1,
            pixel_noise: 0.02,
            annotator_jitter: 0.5,
            annotator_miss_probability: 0.0,
            ..Self::default()
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, reason: &str| Err(Error::config(format!("scene.{name}"), reason));
        if self.image_size < 8 {
            return f("image_size", "must be >= 8");
        }
        if self.channels == 0 {
            return f("channels", "must be >= 1");
        }
        if self.frames_per_sample < 2 {
            return f("frames_per_sample", "must be >= 2");
        }
        if self.annotators == 0 {
            return f("annotators", "must be >= 1");
        }
        if !self.contrails_per_scene.ordered() {
            return f("contrails_per_scene", "min exceeds max");
        }
        if !(self.contrail_width.min > 0.0) || !self.contrail_width.ordered() {
            return f("contrail_width", "need 0 < min <= max");
        }
        if !self.contrail_length.ordered() {
            return f("contrail_length", "min exceeds max");
        }
        if self.contrail_length.min < 3.0 * self.contrail_width.max {
            return f("contrail_length", "min must be at least 3x the largest width");
        }
        let span = self.image_size as f64 - 2.0 * self.margin();
        if self.contrail_length.max > span * std::f64::consts::SQRT_2 {
            return f("contrail_length", "max exceeds the usable image diagonal");
        }
        if !self.contrail_intensity.ordered() || !(self.contrail_intensity.min > 0.0) {
            return f("contrail_intensity", "need 0 < min <= max");
        }
        for (name, v) in [
            ("drift", self.drift),
            ("background_amplitude", self.background_amplitude),
            ("pixel_noise", self.pixel_noise),
            ("annotator_jitter", self.annotator_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return f(name, "must be finite and >= 0");
            }
        }
        if !(0.0..=1.0).contains(&self.annotator_miss_probability) {
            return f("annotator_miss_probability", "must lie in [0, 1]");
        }
        Ok(())
    }

    /// Keeps every frame's contrail, and its jittered outline, inside the
    /// annotation bounds.
    fn margin(&self) -> f64 {
        1.0 + self.contrail_width.max / 2.0 + self.drift * (self.frames_per_sample - 1) as f64
    }
}

/// A straight contrail segment with its half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contrail {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub width: f64,
}

impl Contrail {
    /// The quadrilateral enclosing the segment at full width, with flat ends.
    pub fn quad(&self) -> Ring {
        let [x0, y0] = self.start;
        let [x1, y1] = self.end;
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let (nx, ny) = (-(y1 - y0) / len * self.width / 2.0, (x1 - x0) / len * self.width / 2.0);
        vec![[x0 + nx, y0 + ny], [x1 + nx, y1 + ny], [x1 - nx, y1 - ny], [x0 - nx, y0 - ny]]
    }

    fn translated(&self, d: [f64; 2]) -> Self {
        Self {
            start: [self.start[0] + d[0], self.start[1] + d[1]],
            end: [self.end[0] + d[0], self.end[1] + d[1]],
            width: self.width,
        }
    }

    /// Distance from `p` to the segment.
    fn distance(&self, p: [f64; 2]) -> f64 {
        let (a, b) = (self.start, self.end);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
    }
}

fn segment_distance(a: &Contrail, b: &Contrail) -> f64 {
    // Non-crossing segments attain their minimum distance at an endpoint.
    let crosses = {
        let orient =
            |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
        let d1 = orient(a.start, a.end, b.start);
        let d2 = orient(a.start, a.end, b.end);
        let d3 = orient(b.start, b.end, a.start);
        let d4 = orient(b.start, b.end, a.end);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    };
    if crosses {
        return 0.0;
    }
    a.distance(b.start).min(a.distance(b.end)).min(b.distance(a.start)).min(b.distance(a.end))
}

/// Smooth cloud-like field: a few random low-frequency plane waves.
fn background(rng: &mut ChaCha8Rng, size: usize, amplitude: f64) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let freq = rng.random_range(0.5..2.5) * std::f64::consts::TAU / size as f64;
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.3..1.0);
            (freq * theta.cos(), freq * theta.sin(), phase, amp)
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let base = rng.random_range(0.1..0.3);
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            let v: f64 = waves.iter().map(|&(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin()).sum();
            out.push(base + amplitude * 0.5 * (1.0 + v / norm));
        }
    }
    out
}

fn place_contrails(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Result<(Vec<Contrail>, Vec<[f64; 2]>)> {
    let count = rng.random_range(cfg.contrails_per_scene.min..=cfg.contrails_per_scene.max);
    let (lo, hi) = (cfg.margin(), cfg.image_size as f64 - cfg.margin());
    let mut placed: Vec<Contrail> = Vec::with_capacity(count);
    let mut velocity = Vec::with_capacity(count);
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > 5_000 {
            if placed.len() >= cfg.contrails_per_scene.min.max(1) {
                break;
            }
            return Err(Error::config("scene.contrails_per_scene", "cannot place non-touching contrails"));
        }
        let len = rng.random_range(cfg.contrail_length.min..=cfg.contrail_length.max);
        let width = rng.random_range(cfg.contrail_width.min..=cfg.contrail_width.max);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (hx, hy) = (angle.cos() * len / 2.0, angle.sin() * len / 2.0);
        if 2.0 * hx.abs() > hi - lo || 2.0 * hy.abs() > hi - lo {
            continue;
        }
        let cx = rng.random_range(lo + hx.abs()..=hi - hx.abs());
        let cy = rng.random_range(lo + hy.abs()..=hi - hy.abs());
        let c = Contrail { start: [cx - hx, cy - hy], end: [cx + hx, cy + hy], width };
        // Separate by a gap that survives jitter and drift, so components never merge.
        let clear = placed.iter().all(|o| {
            segment_distance(o, &c) > (o.width + c.width) / 2.0 + 3.0 + 2.0 * cfg.drift * cfg.frames_per_sample as f64
        });
        if clear {
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = rng.random_range(0.0..=cfg.drift);
            velocity.push([dir.cos() * speed, dir.sin() * speed]);
            placed.push(c);
        }
    }
    Ok((placed, velocity))
}

fn render(rng: &mut ChaCha8Rng, cfg: &SceneConfig, contrails: &[Contrail], intensity: &[f64], bg: &[f64]) -> Tensor {
    let n = cfg.image_size;
    let noise = Normal::new(0.0, cfg.pixel_noise.max(f64::MIN_POSITIVE)).expect("validated sigma");
    let mut data = Vec::with_capacity(cfg.channels * n * n);
    for ch in 0..cfg.channels {
        // Later channels see the contrail slightly dimmer, like a second band.
        let gain = 1.0 / (1.0 + 0.25 * ch as f64);
        for i in 0..n {
            for j in 0..n {
                let p = [j as f64 + 0.5, i as f64 + 0.5];
                let mut v = bg[i * n + j];
                for (c, &a) in contrails.iter().zip(intensity) {
                    // Anti-aliased capsule: one-pixel linear ramp across the rim.
                    let cover = (c.width / 2.0 - c.distance(p) + 0.5).clamp(0.0, 1.0);
                    v += gain * a * cover;
                }
                if cfg.pixel_noise > 0.0 {
                    v += noise.sample(rng);
                }
                data.push(v as f32);
            }
        }
    }
    Tensor::new(&[cfg.channels, n, n], data).expect("shape matches")
}

fn annotate(rng: &mut ChaCha8Rng, cfg: &SceneConfig, sample_id: &str, contrails: &[Contrail]) -> AnnotationSet {
    let jitter = Normal::new(0.0, cfg.annotator_jitter.max(f64::MIN_POSITIVE)).expect("validated sigma");
    let bound = |v: f64| v.clamp(-1.0, cfg.image_size as f64 + 1.0);
    let mut annotations = Vec::with_capacity(cfg.annotators);
    for a in 0..cfg.annotators {
        let mut polygons = Vec::with_capacity(contrails.len());
        for c in contrails {
            if cfg.annotator_miss_probability > 0.0 && rng.random_bool(cfg.annotator_miss_probability) {
                continue;
            }
            let ring: Ring = c
                .quad()
                .into_iter()
                .map(|[x, y]| {
                    if cfg.annotator_jitter > 0.0 {
                        [bound(x + jitter.sample(rng)), bound(y + jitter.sample(rng))]
                    } else {
                        [x, y]
                    }
                })
                .collect();
            polygons.push(ring);
        }
        annotations.push(PolygonAnnotation { annotator_id: a as u32, polygons });
    }
    AnnotationSet { sample_id: sample_id.to_string(), height: cfg.image_size, width: cfg.image_size, annotations }
}

/// Builds sample `index` from its own random stream, independent of every
/// other sample.
pub fn generate_sample(cfg: &SceneConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let id = format!("s{index:05}");
    let (base, velocity) = place_contrails(&mut rng, cfg)?;
    let intensity: Vec<f64> =
        base.iter().map(|_| rng.random_range(cfg.contrail_intensity.min..=cfg.contrail_intensity.max)).collect();
    let bg = background(&mut rng, cfg.image_size, cfg.background_amplitude);
    let mut frames = Vec::with_capacity(cfg.frames_per_sample);
    let mut annotations = Vec::with_capacity(cfg.frames_per_sample);
    let mut truth = Vec::with_capacity(cfg.frames_per_sample);
    for f in 0..cfg.frames_per_sample {
        let now: Vec<Contrail> =
            base.iter().zip(&velocity).map(|(c, v)| c.translated([v[0] * f as f64, v[1] * f as f64])).collect();
        frames.push(render(&mut rng, cfg, &now, &intensity, &bg));
        annotations.push(annotate(&mut rng, cfg, &id, &now));
        truth.push(now);
    }
    Ok(Sample { id, frames, annotations, truth })
}

/// Generates `n_samples` scenes. Output does not depend on thread count.
pub fn generate(cfg: &SceneConfig, n_samples: usize) -> Result<Dataset> {
    cfg.validate()?;
    let samples = (0..n_samples).into_par_iter().map(|i| generate_sample(cfg, i)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { scene: cfg.clone(), samples })
}
