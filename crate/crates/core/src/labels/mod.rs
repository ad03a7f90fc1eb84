//! From polygon annotations to training targets: rasterization under two
//! pixel conventions, misalignment correction, soft and majority
//! aggregation, and the contrail validity rules.

mod aggregate;
mod correction;
mod mask;
mod polygon;
mod validity;

pub use aggregate::{aggregate_majority, aggregate_soft, majority_of, mean_of, soft_from_counts, vote_counts};
pub use correction::{misalignment_correct, sample_bilinear, shift_image, CorrectionConfig};
pub use mask::{HardMask, SoftMask};
pub use polygon::{
    point_in_ring, rasterize, rect_ring, AnnotationSet, Point, PolygonAnnotation, RasterConvention, Ring,
};
pub use validity::{
    connected_components, pca_aspect, validity_filter, Appearance, Component, ComponentReport, ValidityConfig,
    ValidityReport,
};
