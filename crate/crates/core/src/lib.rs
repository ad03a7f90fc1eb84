//! Desk-scale contrail segmentation without an ML framework.
//!
//! The crate is layered bottom-up:
//!
//! - [`autograd`]: tensors, a reverse-mode tape, and finite-difference checks
//! - [`model`]: compound scaling, SE and MBConv blocks, the encoder/decoder network
//! - [`labels`]: polygon rasterization, misalignment correction, soft labels, validity rules
//! - [`metrics`]: Dice, BCE, and the composite training loss
//! - [`synth`]: the synthetic contrail corpus and its on-disk layout
//! - [`train`]: k-fold cross-validation, augmentation, pseudo-labels, two-phase training
//! - [`checks`]: the finite-difference suite behind `contrailseg gradcheck`

pub mod autograd;
pub mod checks;
pub mod container;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autograd::{gradcheck, Tape, Var};
pub use error::{Error, Result};
pub use labels::{AnnotationSet, HardMask, PolygonAnnotation, RasterConvention, SoftMask};
pub use metrics::LossConfig;
pub use model::{Model, NetworkSpec, ScalingConfig};
pub use synth::{Dataset, SceneConfig};
pub use tensor::Tensor;
pub use train::{CrossValReport, PseudoLabelSet, TrainConfig};

/// Renders a serde path (`a.b[2].c`) as a JSON pointer (`/a/b/2/c`).
pub(crate) fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(key),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}
