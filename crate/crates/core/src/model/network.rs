//! Micro EfficientNet-style encoder with a U-Net decoder.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{ConvLayer, MbConvBlock, MbConvSpec, SeActivation};
use super::params::ParamStore;
use super::scaling::{compound_scale, scale_channels, scale_repeats, scale_resolution, ScalingConfig};
use crate::autograd::{Conv2dParams, Tape, Var};
use crate::container;
use crate::error::{Error, Result};
use crate::tensor::{nchw, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub repeats: usize,
    pub channels: usize,
    /// 1 or 2; applied by the first block of the stage.
    pub stride: usize,
    pub expansion: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    /// One entry per stride-2 stage, deepest first.
    pub decoder_channels: Vec<usize>,
    pub kernel_size: usize,
    pub se_ratio: usize,
    pub se_activation: SeActivation,
    pub swish_beta_init: f32,
    /// Base input resolution before compound scaling.
    pub input_size: usize,
    pub scaling: ScalingConfig,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let stage = |repeats, channels, stride| StageSpec { repeats, channels, stride, expansion: 4 };
        Self {
            in_channels: 1,
            stem_channels: 8,
            stages: vec![stage(1, 8, 1), stage(2, 16, 2), stage(2, 24, 2)],
            decoder_channels: vec![16, 8],
            kernel_size: 3,
            se_ratio: 4,
            se_activation: SeActivation::Relu,
            swish_beta_init: 1.0,
            input_size: 64,
            scaling: ScalingConfig::default(),
        }
    }
}

impl NetworkSpec {
    /// Two stages at 8 channels on 16×16 inputs; small enough for
    /// exhaustive finite differences.
    pub fn tiny() -> Self {
        Self {
            stem_channels: 8,
            stages: vec![
                StageSpec { repeats: 1, channels: 8, stride: 1, expansion: 2 },
                StageSpec { repeats: 1, channels: 8, stride: 2, expansion: 2 },
            ],
            decoder_channels: vec![8],
            input_size: 16,
            ..Self::default()
        }
    }

    /// Applies compound scaling and checks the resulting architecture.
    pub fn scaled(&self) -> Result<ScaledNetwork> {
        let m = compound_scale(&self.scaling)?;
        if self.in_channels == 0 {
            return Err(Error::config("network.in_channels", "must be >= 1"));
        }
        if self.stages.is_empty() {
            return Err(Error::config("network.stages", "need at least one stage"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::config("network.kernel_size", "must be odd"));
        }
        let mut stages = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if s.stride != 1 && s.stride != 2 {
                return Err(Error::config(format!("network.stages/{i}/stride"), "must be 1 or 2"));
            }
            if s.repeats == 0 {
                return Err(Error::config(format!("network.stages/{i}/repeats"), "must be >= 1"));
            }
            if s.expansion == 0 {
                return Err(Error::config(format!("network.stages/{i}/expansion"), "must be >= 1"));
            }
            stages.push(StageSpec {
                repeats: scale_repeats(s.repeats, m.depth),
                channels: scale_channels(s.channels, m.width),
                stride: s.stride,
                expansion: s.expansion,
            });
        }
        let downsamples = stages.iter().filter(|s| s.stride == 2).count();
        if self.decoder_channels.len() != downsamples {
            return Err(Error::config(
                "network.decoder_channels",
                format!("need one entry per stride-2 stage ({downsamples}), got {}", self.decoder_channels.len()),
            ));
        }
        let factor = 1usize << downsamples;
        let resolution = scale_resolution(self.input_size, m.resolution);
        if !resolution.is_multiple_of(factor) {
            return Err(Error::config(
                "network.input_size",
                format!("scaled resolution {resolution} not divisible by downsample factor {factor}"),
            ));
        }
        Ok(ScaledNetwork {
            in_channels: self.in_channels,
            stem_channels: scale_channels(self.stem_channels, m.width),
            stages,
            decoder_channels: self.decoder_channels.iter().map(|&c| scale_channels(c, m.width)).collect(),
            kernel_size: self.kernel_size,
            se_ratio: self.se_ratio,
            se_activation: self.se_activation,
            swish_beta_init: self.swish_beta_init,
            resolution,
            downsample_factor: factor,
        })
    }
}

/// Architecture after compound scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledNetwork {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    pub decoder_channels: Vec<usize>,
    pub kernel_size: usize,
    pub se_ratio: usize,
    pub se_activation: SeActivation,
    pub swish_beta_init: f32,
    pub resolution: usize,
    pub downsample_factor: usize,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    conv: ConvLayer,
    beta: usize,
}

/// Segmentation network mapping `N×C×H×W` images to `N×1×H×W` logits.
#[derive(Clone, Debug)]
pub struct Model {
    spec: NetworkSpec,
    arch: ScaledNetwork,
    store: ParamStore,
    stem: ConvLayer,
    stem_beta: usize,
    blocks: Vec<MbConvBlock>,
    decoder: Vec<DecoderStage>,
    head: ConvLayer,
}

impl Model {
    /// Builds and initializes from `seed`; identical seeds give
    /// bit-identical parameters.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let arch = spec.scaled()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k = arch.kernel_size;
        let same = |stride| Conv2dParams::new(stride, k / 2, 1);

        let stem = ConvLayer::new(&mut store, "stem", arch.in_channels, arch.stem_channels, k, same(1), 2.0, &mut rng);
        let stem_beta = store.add("stem.beta", Tensor::scalar(arch.swish_beta_init));

        let mut blocks = Vec::new();
        let mut channels = arch.stem_channels;
        let mut skip_channels = Vec::new();
        for (si, stage) in arch.stages.iter().enumerate() {
            for r in 0..stage.repeats {
                let stride = if r == 0 { stage.stride } else { 1 };
                if stride == 2 {
                    skip_channels.push(channels);
                }
                let block = MbConvBlock::new(
                    &mut store,
                    &format!("stage{si}.block{r}"),
                    MbConvSpec {
                        in_channels: channels,
                        out_channels: stage.channels,
                        expansion: stage.expansion,
                        kernel: k,
                        stride,
                        se_ratio: arch.se_ratio,
                        se_activation: arch.se_activation,
                        swish_beta_init: arch.swish_beta_init,
                    },
                    &mut rng,
                )?;
                blocks.push(block);
                channels = stage.channels;
            }
        }

        let mut decoder = Vec::new();
        for (di, (&out, &skip)) in arch.decoder_channels.iter().zip(skip_channels.iter().rev()).enumerate() {
            let conv =
                ConvLayer::new(&mut store, &format!("decoder{di}"), channels + skip, out, k, same(1), 2.0, &mut rng);
            let beta = store.add(format!("decoder{di}.beta"), Tensor::scalar(arch.swish_beta_init));
            decoder.push(DecoderStage { conv, beta });
            channels = out;
        }
        let head = ConvLayer::new(&mut store, "head", channels, 1, 1, Conv2dParams::default(), 1.0, &mut rng);

        Ok(Self { spec: spec.clone(), arch, store, stem, stem_beta, blocks, decoder, head })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn architecture(&self) -> &ScaledNetwork {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn blocks(&self) -> &[MbConvBlock] {
        &self.blocks
    }

    pub fn downsample_factor(&self) -> usize {
        self.arch.downsample_factor
    }

    /// Zeroes the 1×1 output head, making every logit exactly 0.
    pub fn zero_head(&mut self) {
        for i in [self.head.weight, self.head.bias] {
            self.store.get_mut(i).data_mut().fill(0.0);
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = nchw("model", shape)?;
        if c != self.arch.in_channels {
            return Err(Error::dim("model", "C", self.arch.in_channels, c));
        }
        let f = self.arch.downsample_factor;
        if h % f != 0 || w % f != 0 {
            return Err(Error::config("image_size", format!("input {h}x{w} not divisible by downsample factor {f}")));
        }
        Ok(())
    }

    /// Forward pass with parameter vars supplied by the caller (in
    /// [`ParamStore`] order).
    pub fn forward_with(&self, tape: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        self.check_input(&tape.shape(x))?;
        if vars.len() != self.store.len() {
            return Err(Error::Usage(format!("{} vars for {} parameters", vars.len(), self.store.len())));
        }
        let mut h = self.stem.forward(tape, vars, x)?;
        h = tape.swish(h, vars[self.stem_beta])?;
        let mut skips = Vec::new();
        for block in &self.blocks {
            if block.spec.stride == 2 {
                skips.push(h);
            }
            h = block.forward(tape, vars, h)?;
        }
        for (stage, skip) in self.decoder.iter().zip(skips.into_iter().rev()) {
            let up = tape.upsample_bilinear(h, 2)?;
            let cat = tape.concat_channels(up, skip)?;
            h = stage.conv.forward(tape, vars, cat)?;
            h = tape.swish(h, vars[stage.beta])?;
        }
        self.head.forward(tape, vars, h)
    }

    /// Records parameters as differentiable leaves and runs forward.
    pub fn forward(&self, tape: &Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let vars = self.store.register(tape);
        let logits = self.forward_with(tape, &vars, x)?;
        Ok((logits, vars))
    }

    /// Sigmoid probabilities for a batch, without recording gradients.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.store.register_frozen(&tape);
        let x = tape.constant(images);
        let logits = self.forward_with(&tape, &vars, x)?;
        let probs = tape.sigmoid(logits);
        Ok(tape.tensor(probs))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let named: Vec<(&str, &Tensor)> = self.store.named().collect();
        container::save(path, &named)
    }

    /// Rebuilds the architecture from `spec` and loads weights from a
    /// container written by [`Model::save`].
    pub fn load(path: &Path, spec: &NetworkSpec) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        model.store.load_values(&container::load(path)?)?;
        Ok(model)
    }
}
