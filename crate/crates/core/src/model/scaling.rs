//! Compound depth/width/resolution scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent `phi` and the per-dimension bases it raises.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub phi: f64,
    /// depth base
    pub alpha: f64,
    /// width base (unrelated to the Swish slope)
    pub beta_w: f64,
    /// resolution base
    pub gamma: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { phi: 0.0, alpha: 1.2, beta_w: 1.1, gamma: 1.15 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleMultipliers {
    pub depth: f64,
    pub width: f64,
    pub resolution: f64,
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(Error::config("scaling.phi", format!("must be finite and >= 0, got {}", self.phi)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta_w", self.beta_w), ("gamma", self.gamma)] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(Error::config(format!("scaling.{name}"), format!("base must be >= 1, got {v}")));
            }
        }
        Ok(())
    }
}

/// Returns `(alpha^phi, beta_w^phi, gamma^phi)`.
pub fn compound_scale(cfg: &ScalingConfig) -> Result<ScaleMultipliers> {
    cfg.validate()?;
    Ok(ScaleMultipliers {
        depth: cfg.alpha.powf(cfg.phi),
        width: cfg.beta_w.powf(cfg.phi),
        resolution: cfg.gamma.powf(cfg.phi),
    })
}

// Guards ceil() against products like 5 * 1.2 = 6.000000000000001.
const CEIL_SLACK: f64 = 1e-9;

pub fn scale_repeats(repeats: usize, depth: f64) -> usize {
    ((repeats as f64 * depth - CEIL_SLACK).ceil() as usize).max(1)
}

/// Nearest multiple of 4, never below 4.
pub fn scale_channels(channels: usize, width: f64) -> usize {
    let scaled = channels as f64 * width;
    (((scaled / 4.0).round() as usize) * 4).max(4)
}

pub fn scale_resolution(resolution: usize, res: f64) -> usize {
    (resolution as f64 * res).round() as usize
}
