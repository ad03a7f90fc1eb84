//! Polygon annotations and their conversion to pixel masks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mask::HardMask;
use crate::error::{Error, Result};

pub type Point = [f64; 2];
pub type Ring = Vec<Point>;

/// Where each pixel is sampled when testing polygon membership.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterConvention {
    /// Pixel `(i, j)` is tested at its centre `(j + 0.5, i + 0.5)`.
    #[default]
    Center,
    /// Tested at `(j + 1, i + 1)`: the half-pixel-biased conversion the
    /// misalignment correction undoes.
    Legacy,
}

impl RasterConvention {
    pub fn sample_offset(self) -> f64 {
        match self {
            RasterConvention::Center => 0.5,
            RasterConvention::Legacy => 1.0,
        }
    }
}

/// One annotator's polygons for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolygonAnnotation {
    #[serde(rename = "id")]
    pub annotator_id: u32,
    pub polygons: Vec<Ring>,
}

/// Every annotator's polygons for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSet {
    pub sample_id: String,
    pub height: usize,
    pub width: usize,
    #[serde(rename = "annotators")]
    pub annotations: Vec<PolygonAnnotation>,
}

/// Vertices may overhang the image by this much.
const OVERHANG: f64 = 1.0;

impl PolygonAnnotation {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for (r, ring) in self.polygons.iter().enumerate() {
            if ring.len() < 3 {
                return Err(Error::Annotation(format!(
                    "annotator {} ring {r} has {} vertices, need >= 3",
                    self.annotator_id,
                    ring.len()
                )));
            }
            for p in ring {
                let ok = p[0].is_finite()
                    && p[1].is_finite()
                    && (-OVERHANG..=width as f64 + OVERHANG).contains(&p[0])
                    && (-OVERHANG..=height as f64 + OVERHANG).contains(&p[1]);
                if !ok {
                    return Err(Error::Annotation(format!(
                        "annotator {} ring {r} vertex {p:?} outside [-1, W+1]x[-1, H+1]",
                        self.annotator_id
                    )));
                }
            }
        }
        Ok(())
    }
}

impl AnnotationSet {
    pub fn annotator_count(&self) -> usize {
        self.annotations.len()
    }

    /// Checks geometry, unique ids, and the minimum annotator count.
    pub fn validate(&self, min_annotators: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Annotation("image dimensions must be positive".into()));
        }
        if self.annotations.len() < min_annotators {
            return Err(Error::Annotation(format!(
                "sample {} has {} annotators, need >= {min_annotators}",
                self.sample_id,
                self.annotations.len()
            )));
        }
        let mut ids: Vec<u32> = self.annotations.iter().map(|a| a.annotator_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Annotation(format!("sample {} has duplicate annotator ids", self.sample_id)));
        }
        self.annotations.iter().try_for_each(|a| a.validate(self.height, self.width))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Format { pointer: crate::json_pointer(e.path()), reason: e.inner().to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotations serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// How far a point may sit from an edge and still count as on it.
const EDGE_EPS: f64 = 1e-9;

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if cross.abs() > EDGE_EPS * len.max(1.0) {
        return false;
    }
    p[0] >= a[0].min(b[0]) - EDGE_EPS
        && p[0] <= a[0].max(b[0]) + EDGE_EPS
        && p[1] >= a[1].min(b[1]) - EDGE_EPS
        && p[1] <= a[1].max(b[1]) + EDGE_EPS
}

/// Even-odd membership; points on the boundary are inside.
pub fn point_in_ring(p: Point, ring: &[Point]) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Rasterizes the union of one annotator's rings.
pub fn rasterize(
    poly: &PolygonAnnotation,
    height: usize,
    width: usize,
    convention: RasterConvention,
) -> Result<HardMask> {
    if height == 0 || width == 0 {
        return Err(Error::Usage("rasterize needs positive dimensions".into()));
    }
    let mut mask = HardMask::zeros(height, width);
    for (r, ring) in poly.polygons.iter().enumerate() {
        if ring.len() < 3 {
            return Err(Error::Annotation(format!(
                "annotator {} ring {r} is degenerate ({} vertices)",
                poly.annotator_id,
                ring.len()
            )));
        }
        rasterize_ring(ring, &mut mask, convention);
    }
    Ok(mask)
}

fn rasterize_ring(ring: &[Point], mask: &mut HardMask, convention: RasterConvention) {
    let off = convention.sample_offset();
    let (h, w) = (mask.height(), mask.width());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in ring {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    // pixel index range whose sample point can fall in the bounding box
    let lo = |v: f64, n: usize| ((v - off - EDGE_EPS).ceil().max(0.0) as usize).min(n);
    let hi = |v: f64, n: usize| (((v - off + EDGE_EPS).floor() + 1.0).max(0.0) as usize).min(n);
    for i in lo(y0, h)..hi(y1, h) {
        for j in lo(x0, w)..hi(x1, w) {
            if !mask.get(i, j) && point_in_ring([j as f64 + off, i as f64 + off], ring) {
                mask.set(i, j, true);
            }
        }
    }
}

/// Axis-aligned rectangle ring, convenient for tests and synthetic data.
pub fn rect_ring(x0: f64, y0: f64, x1: f64, y1: f64) -> Ring {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(ring: Ring) -> PolygonAnnotation {
        PolygonAnnotation { annotator_id: 0, polygons: vec![ring] }
    }

    /// Tests every pixel's sample point directly, no bounding-box pruning.
    fn oracle(poly: &PolygonAnnotation, h: usize, w: usize, conv: RasterConvention) -> HardMask {
        let off = conv.sample_offset();
        HardMask::from_fn(h, w, |i, j| poly.polygons.iter().any(|r| point_in_ring([j as f64 + off, i as f64 + off], r)))
    }

    #[test]
    fn full_square_center_convention() {
        let m = rasterize(&single(rect_ring(0.0, 0.0, 4.0, 4.0)), 4, 4, RasterConvention::Center).unwrap();
        assert_eq!(m.count(), 16);
    }

    #[test]
    fn legacy_convention_shifts_footprint() {
        // Full-grid square: the sample points (j+1, i+1) all land inside or
        // on the boundary, so nothing changes.
        let full = single(rect_ring(0.0, 0.0, 4.0, 4.0));
        let legacy = rasterize(&full, 4, 4, RasterConvention::Legacy).unwrap();
        assert_eq!(legacy, oracle(&full, 4, 4, RasterConvention::Legacy));
        assert_eq!(legacy.count(), 16);

        // Interior rectangle: center convention covers columns 2..=4;
        // legacy covers 1..=3
        let inner = single(rect_ring(1.7, 1.7, 4.7, 4.7));
        let c = rasterize(&inner, 8, 8, RasterConvention::Center).unwrap();
        let l = rasterize(&inner, 8, 8, RasterConvention::Legacy).unwrap();
        assert_eq!(c, oracle(&inner, 8, 8, RasterConvention::Center));
        assert_eq!(l, oracle(&inner, 8, 8, RasterConvention::Legacy));
        let cols = |m: &HardMask| (0..8).filter(|&j| (0..8).any(|i| m.get(i, j))).collect::<Vec<_>>();
        assert_eq!(cols(&c), vec![2, 3, 4]);
        assert_eq!(cols(&l), vec![1, 2, 3]);
        assert_ne!(c, l);
    }

    #[test]
    fn empty_polygon_list_gives_empty_mask() {
        let p = PolygonAnnotation { annotator_id: 3, polygons: vec![] };
        assert_eq!(rasterize(&p, 5, 7, RasterConvention::Center).unwrap().count(), 0);
    }

    #[test]
    fn degenerate_ring_is_annotation_error() {
        let p = single(vec![[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(rasterize(&p, 4, 4, RasterConvention::Center), Err(Error::Annotation(_))));
    }

    #[test]
    fn boundary_counts_as_inside() {
        // centre (1.5, 1.5) lies exactly on the left edge
        let p = single(rect_ring(1.5, 0.0, 3.0, 4.0));
        let m = rasterize(&p, 4, 4, RasterConvention::Center).unwrap();
        assert!(m.get(0, 1));
        assert!(!m.get(0, 0));
    }

    #[test]
    fn annotation_json_schema() {
        let text = r#"{"sample_id":"s1","height":4,"width":4,
            "annotators":[{"id":0,"polygons":[[[0,0],[4,0],[4,4]]]}]}"#;
        let set = AnnotationSet::from_json(text).unwrap();
        assert_eq!(set.annotations[0].polygons[0].len(), 3);
        let missing = r#"{"sample_id":"s1","width":4,"annotators":[]}"#;
        match AnnotationSet::from_json(missing) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("height")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn validation_rules() {
        let ann = |id| PolygonAnnotation { annotator_id: id, polygons: vec![rect_ring(0.0, 0.0, 2.0, 2.0)] };
        let set = AnnotationSet {
            sample_id: "x".into(),
            height: 4,
            width: 4,
            annotations: vec![ann(0), ann(1), ann(2), ann(3)],
        };
        set.validate(4).unwrap();
        assert!(set.validate(5).is_err());
        let mut dup = set.clone();
        dup.annotations[1].annotator_id = 0;
        assert!(dup.validate(4).is_err());
        let mut far = set.clone();
        far.annotations[0].polygons[0][0] = [-3.0, 0.0];
        assert!(far.validate(4).is_err());
    }

    fn arb_ring() -> impl Strategy<Value = Ring> {
        proptest::collection::vec((2.0f64..14.0, 2.0f64..14.0), 3..7)
            .prop_map(|pts| pts.into_iter().map(|(x, y)| [x, y]).collect())
    }

    proptest! {
        #[test]
        fn matches_unpruned_oracle(ring in arb_ring(), legacy in any::<bool>()) {
            let conv = if legacy { RasterConvention::Legacy } else { RasterConvention::Center };
            let p = single(ring);
            prop_assert_eq!(rasterize(&p, 16, 16, conv).unwrap(), oracle(&p, 16, 16, conv));
        }

        #[test]
        fn unit_translation_shifts_mask(ring in arb_ring()) {
            let shifted: Ring = ring.iter().map(|p| [p[0] + 1.0, p[1] + 1.0]).collect();
            let a = rasterize(&single(ring), 20, 20, RasterConvention::Center).unwrap();
            let b = rasterize(&single(shifted), 20, 20, RasterConvention::Center).unwrap();
            for i in 0..19 {
                for j in 0..19 {
                    prop_assert_eq!(a.get(i, j), b.get(i + 1, j + 1));
                }
            }
        }
    }
}
