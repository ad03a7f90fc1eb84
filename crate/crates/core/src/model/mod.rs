//! Network construction: compound scaling, SE and MBConv blocks, and the
//! encoder/decoder segmentation model.

mod blocks;
mod network;
mod params;
mod scaling;

pub use blocks::{ConvLayer, MbConvBlock, MbConvSpec, SeActivation, SeBlock};
pub use network::{Model, NetworkSpec, ScaledNetwork, StageSpec};
pub use params::ParamStore;
pub use scaling::{compound_scale, scale_channels, scale_repeats, scale_resolution, ScaleMultipliers, ScalingConfig};
