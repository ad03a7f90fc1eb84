//! Cross-validated training, augmentation, pseudo-labels and the two-phase
//! schedule built on them.

mod augment;
mod config;
mod data;
mod fit;
mod folds;
mod pipeline;
mod pseudo;

pub use augment::{augment, hflip_image, Affine};
pub use config::{AugmentConfig, TrainConfig};
pub use data::{DataSplit, SplitItems, TrainItem, UnlabeledItem};
pub use fit::{evaluate, fit, fit_from, train_fold, EvalReport, FitOutcome, FoldOutcome, SampleMetrics};
pub use folds::{cross_validate, kfold_split, CrossValReport, CrossValidation};
pub use pipeline::{ablation, two_phase_train, AblationRow, TwoPhaseOutcome, TwoPhaseReport, ABLATION_ROWS};
pub use pseudo::{generate_pseudo_labels, PseudoLabelSet};
