//! Convolution, squeeze-and-excitation and MBConv building blocks.
//!
//! Blocks do not own tensors: they hold indices into a [`ParamStore`] and
//! read the matching tape [`Var`]s at forward time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{he_normal, ParamStore};
use crate::autograd::{Conv2dParams, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{nchw, Tensor};

/// Activation between the two SE projections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeActivation {
    #[default]
    Relu,
    Swish,
    Identity,
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub conv: Conv2dParams,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        conv: Conv2dParams,
        gain: f32,
        rng: &mut R,
    ) -> Self {
        let cin_g = cin / conv.groups;
        let fan_in = cin_g * kernel * kernel;
        let w = he_normal(rng, &[cout, cin_g, kernel, kernel], fan_in, gain);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { weight, bias, conv }
    }

    pub fn forward(&self, tape: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, vars[self.weight], Some(vars[self.bias]), self.conv)
    }
}

/// Channel gate `x * sigmoid(W2 act(W1 avgpool(x)))`.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub reduce: ConvLayer,
    pub expand: ConvLayer,
    pub reduction_ratio: usize,
    pub activation: SeActivation,
    channels: usize,
}

impl SeBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        reduction_ratio: usize,
        activation: SeActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction_ratio == 0 {
            return Err(Error::config("se_ratio", "must be >= 1"));
        }
        let reduced = (channels / reduction_ratio).max(1);
        let p = Conv2dParams::default();
        Ok(Self {
            reduce: ConvLayer::new(store, &format!("{name}.reduce"), channels, reduced, 1, p, 2.0, rng),
            expand: ConvLayer::new(store, &format!("{name}.expand"), reduced, channels, 1, p, 1.0, rng),
            reduction_ratio,
            activation,
            channels,
        })
    }

    pub fn reduced_channels(&self) -> usize {
        (self.channels / self.reduction_ratio).max(1)
    }

    /// Returns the `N×C×1×1` gate alone.
    pub fn gate(&self, tape: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        let [_, c, _, _] = nchw("se_block", &tape.shape(x))?;
        if c != self.channels {
            return Err(Error::dim("se_block", "C", self.channels, c));
        }
        let pooled = tape.global_avg_pool(x)?;
        let hidden = self.reduce.forward(tape, vars, pooled)?;
        let hidden = match self.activation {
            SeActivation::Relu => tape.relu(hidden),
            SeActivation::Swish => {
                let one = tape.constant(&Tensor::scalar(1.0));
                tape.swish(hidden, one)?
            }
            SeActivation::Identity => hidden,
        };
        let logits = self.expand.forward(tape, vars, hidden)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn forward(&self, tape: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        let gate = self.gate(tape, vars, x)?;
        tape.scale_channels(x, gate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MbConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub kernel: usize,
    pub stride: usize,
    pub se_ratio: usize,
    pub se_activation: SeActivation,
    pub swish_beta_init: f32,
}

impl MbConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.expansion == 0 {
            return Err(Error::config("expansion", "must be >= 1"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel", format!("must be odd, got {}", self.kernel)));
        }
        if self.stride == 0 {
            return Err(Error::config("stride", "must be >= 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channels", "must be >= 1"));
        }
        Ok(())
    }
}

/// Inverted-residual block: 1×1 expand, depthwise k×k, SE, linear 1×1
/// projection, identity shortcut when shapes allow.
#[derive(Clone, Debug)]
pub struct MbConvBlock {
    pub spec: MbConvSpec,
    pub expand: Option<(ConvLayer, usize)>,
    pub depthwise: ConvLayer,
    pub depthwise_beta: usize,
    pub se: SeBlock,
    pub project: ConvLayer,
}

impl MbConvBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, spec: MbConvSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mid = spec.in_channels * spec.expansion;
        let beta = || Tensor::scalar(spec.swish_beta_init);
        let expand = (spec.expansion > 1).then(|| {
            let conv = ConvLayer::new(
                store,
                &format!("{name}.expand"),
                spec.in_channels,
                mid,
                1,
                Conv2dParams::default(),
                2.0,
                rng,
            );
            let b = store.add(format!("{name}.expand.beta"), beta());
            (conv, b)
        });
        let depthwise = ConvLayer::new(
            store,
            &format!("{name}.depthwise"),
            mid,
            mid,
            spec.kernel,
            Conv2dParams::new(spec.stride, spec.kernel / 2, mid),
            2.0,
            rng,
        );
        let depthwise_beta = store.add(format!("{name}.depthwise.beta"), beta());
        let se = SeBlock::new(store, &format!("{name}.se"), mid, spec.se_ratio, spec.se_activation, rng)?;
        let project = ConvLayer::new(
            store,
            &format!("{name}.project"),
            mid,
            spec.out_channels,
            1,
            Conv2dParams::default(),
            1.0,
            rng,
        );
        Ok(Self { spec, expand, depthwise, depthwise_beta, se, project })
    }

    pub fn has_residual(&self) -> bool {
        self.spec.stride == 1 && self.spec.in_channels == self.spec.out_channels
    }

    pub fn forward(&self, tape: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        let [_, c, _, _] = nchw("mbconv", &tape.shape(x))?;
        if c != self.spec.in_channels {
            return Err(Error::dim("mbconv", "C", self.spec.in_channels, c));
        }
        let mut h = x;
        if let Some((conv, beta)) = &self.expand {
            h = conv.forward(tape, vars, h)?;
            h = tape.swish(h, vars[*beta])?;
        }
        h = self.depthwise.forward(tape, vars, h)?;
        h = tape.swish(h, vars[self.depthwise_beta])?;
        h = self.se.forward(tape, vars, h)?;
        h = self.project.forward(tape, vars, h)?;
        if self.has_residual() {
            h = tape.add(h, x)?;
        }
        Ok(h)
    }
}
