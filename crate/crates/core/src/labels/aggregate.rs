//! Combining several annotators into one label map.

use super::mask::{HardMask, SoftMask};
use super::polygon::{rasterize, AnnotationSet, RasterConvention};
use crate::error::{Error, Result};

/// Per-pixel count of annotators marking the pixel.
pub fn vote_counts(set: &AnnotationSet, convention: RasterConvention) -> Result<Vec<u32>> {
    if set.annotations.is_empty() {
        return Err(Error::Usage(format!("sample {} has no annotators", set.sample_id)));
    }
    let mut counts = vec![0u32; set.height * set.width];
    for ann in &set.annotations {
        let m = rasterize(ann, set.height, set.width, convention)?;
        counts.iter_mut().zip(m.values()).for_each(|(c, &v)| *c += v as u32);
    }
    Ok(counts)
}

/// Mean of the individual rasterizations: `count / N` per pixel.
pub fn aggregate_soft(set: &AnnotationSet, convention: RasterConvention) -> Result<SoftMask> {
    let counts = vote_counts(set, convention)?;
    soft_from_counts(set.height, set.width, &counts, set.annotator_count())
}

pub fn soft_from_counts(height: usize, width: usize, counts: &[u32], annotators: usize) -> Result<SoftMask> {
    let n = annotators as f32;
    SoftMask::from_values(height, width, counts.iter().map(|&c| c as f32 / n).collect())
}

/// `1` where strictly more than half of the annotators agree.
pub fn aggregate_majority(set: &AnnotationSet, convention: RasterConvention) -> Result<HardMask> {
    Ok(aggregate_soft(set, convention)?.threshold(0.5))
}

/// Same rule applied to already rasterized per-annotator masks.
pub fn majority_of(masks: &[HardMask]) -> Result<HardMask> {
    Ok(mean_of(masks)?.threshold(0.5))
}

pub fn mean_of(masks: &[HardMask]) -> Result<SoftMask> {
    let first = masks.first().ok_or_else(|| Error::Usage("no masks to aggregate".into()))?;
    let mut counts = vec![0u32; first.values().len()];
    for (i, m) in masks.iter().enumerate() {
        if !m.same_shape(first) {
            return Err(Error::dim(
                "aggregate",
                format!("mask {i}"),
                format!("{}x{}", first.height(), first.width()),
                format!("{}x{}", m.height(), m.width()),
            ));
        }
        counts.iter_mut().zip(m.values()).for_each(|(c, &v)| *c += v as u32);
    }
    soft_from_counts(first.height(), first.width(), &counts, masks.len())
}
