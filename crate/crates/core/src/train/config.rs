use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::CorrectionConfig;
use crate::metrics::LossConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub shift_scale_rotate_p: f64,
    /// Fraction of the image size.
    pub shift_limit: f64,
    pub scale_limit: f64,
    pub rotate_limit_deg: f64,
    pub hflip_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { shift_scale_rotate_p: 0.6, shift_limit: 0.0625, scale_limit: 0.1, rotate_limit_deg: 15.0, hflip_p: 0.5 }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { shift_scale_rotate_p: 0.0, hflip_p: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("shift_scale_rotate_p", self.shift_scale_rotate_p), ("hflip_p", self.hflip_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("train.augmentation.{name}"), "must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("shift_limit", self.shift_limit),
            ("scale_limit", self.scale_limit),
            ("rotate_limit_deg", self.rotate_limit_deg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("train.augmentation.{name}"), "must be finite and >= 0"));
            }
        }
        if self.scale_limit >= 1.0 {
            return Err(Error::config("train.augmentation.scale_limit", "must be < 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub folds: usize,
    pub augmentation: AugmentConfig,
    pub use_mc: bool,
    pub use_soft_labels: bool,
    pub use_pseudo_labels: bool,
    pub image_size: usize,
    pub correction: CorrectionConfig,
    pub loss: LossConfig,
    /// Binarize pseudo-labels at this probability instead of keeping them soft.
    pub pseudo_threshold: Option<f32>,
    /// Phase two starts from a fresh initialization rather than the best fold.
    pub phase2_fresh_init: bool,
    pub eval_threshold: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            folds: 5,
            augmentation: AugmentConfig::default(),
            use_mc: false,
            use_soft_labels: false,
            use_pseudo_labels: false,
            image_size: 64,
            correction: CorrectionConfig::default(),
            loss: LossConfig::default(),
            pseudo_threshold: None,
            phase2_fresh_init: true,
            eval_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("train.folds", "must be >= 2"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be finite and > 0"));
        }
        if self.image_size == 0 {
            return Err(Error::config("train.image_size", "must be >= 1"));
        }
        if !(self.eval_threshold > 0.0 && self.eval_threshold < 1.0) {
            return Err(Error::config("train.eval_threshold", "must lie in (0, 1)"));
        }
        if let Some(t) = self.pseudo_threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config("train.pseudo_threshold", "must lie in (0, 1)"));
            }
        }
        if !(self.correction.shift_x.is_finite() && self.correction.shift_y.is_finite()) {
            return Err(Error::config("train.correction", "shifts must be finite"));
        }
        self.augmentation.validate()?;
        self.loss.validate().map_err(|e| match e {
            Error::Config { field, reason } => Error::Config { field: format!("train.{field}"), reason },
            other => other,
        })
    }
}
