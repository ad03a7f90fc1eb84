use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::config::TrainConfig;
use super::data::TrainItem;
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::labels::misalignment_correct;
use crate::metrics::{composite_loss, score_probabilities, threshold, DiceCounts};
use crate::model::{Model, NetworkSpec};
use crate::optim::{Adam, Optimizer};
use crate::tensor::Tensor;

/// Stream offsets keep initialization, shuffling and augmentation draws
/// independent of one another for a given seed.
const SHUFFLE_STREAM: u64 = 11;
const EVAL_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub dice: f64,
    pub bce: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Pooled over every pixel of the evaluation set.
    pub dice: f64,
    /// Mean of the per-image scores.
    pub mean_dice: f64,
    pub per_sample: Vec<SampleMetrics>,
}

pub struct FitOutcome {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
}

pub struct FoldOutcome {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
    pub validation: EvalReport,
    /// `1 - pooled validation Dice`.
    pub error: f64,
}

/// The network input for a raw image under `cfg`.
pub(crate) fn model_input(image: &Tensor, cfg: &TrainConfig) -> Result<Tensor> {
    if cfg.use_mc {
        misalignment_correct(image, &cfg.correction)
    } else {
        Ok(image.clone())
    }
}

pub(crate) fn check_geometry(spec: &NetworkSpec, cfg: &TrainConfig, image: &Tensor) -> Result<()> {
    let factor = spec.scaled()?.downsample_factor;
    if !cfg.image_size.is_multiple_of(factor) {
        return Err(Error::config(
            "train.image_size",
            format!("{} is not divisible by the downsample factor {factor}", cfg.image_size),
        ));
    }
    match image.shape() {
        &[c, h, w] if c == spec.in_channels && h == cfg.image_size && w == cfg.image_size => Ok(()),
        &[c, ..] if c != spec.in_channels => Err(Error::config(
            "network.in_channels",
            format!("images have {c} channels, network expects {}", spec.in_channels),
        )),
        s => Err(Error::config(
            "train.image_size",
            format!("image shape {s:?} disagrees with image_size {}", cfg.image_size),
        )),
    }
}

/// Trains a freshly initialized model on `items`.
pub fn fit(items: &[TrainItem], spec: &NetworkSpec, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let model = Model::new(spec, cfg.seed)?;
    fit_from(model, items, cfg)
}

/// Continues training `model` on `items` for `cfg.epochs` epochs.
pub fn fit_from(mut model: Model, items: &[TrainItem], cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let spec = model.spec().clone();
    let mut inputs = Vec::with_capacity(items.len());
    let mut targets = Vec::with_capacity(items.len());
    for it in items {
        check_geometry(&spec, cfg, &it.image)?;
        inputs.push(model_input(&it.image, cfg)?);
        targets.push(it.target(cfg.use_soft_labels));
    }
    let (c, s) = (spec.in_channels, cfg.image_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut xs = Vec::with_capacity(batch.len() * c * s * s);
            let mut ys = Vec::with_capacity(batch.len() * s * s);
            for &i in batch {
                let (img, mask) = augment(&inputs[i], &targets[i], &cfg.augmentation, &mut rng)?;
                xs.extend_from_slice(img.data());
                ys.extend_from_slice(mask.values());
            }
            let n = batch.len();
            let x = Tensor::new(&[n, c, s, s], xs)?;
            let y = Tensor::new(&[n, 1, s, s], ys)?;
            let tape = Tape::new();
            let xv = tape.constant(&x);
            let (logits, vars) = model.forward(&tape, xv)?;
            let loss = composite_loss(&tape, logits, &y, &cfg.loss)?;
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::Training { epoch, reason: format!("loss became {value}") });
            }
            let grads = tape.backward(loss)?;
            let params = model.params_mut();
            params.accumulate(&vars, &grads)?;
            adam.step(&mut params.tensors_mut())?;
            params.zero_grad();
            if params.tensors_mut().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Training { epoch, reason: "parameters became non-finite".into() });
            }
            total += value as f64 * n as f64;
        }
        epoch_losses.push(total / items.len() as f64);
    }
    Ok(FitOutcome { model, epoch_losses })
}

/// Scores `model` on items carrying hard truth masks.
pub fn evaluate(model: &Model, items: &[TrainItem], cfg: &TrainConfig) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Usage("evaluation set is empty".into()));
    }
    let spec = model.spec();
    let mut pooled = DiceCounts::default();
    let mut per_sample = Vec::with_capacity(items.len());
    for chunk in items.chunks(EVAL_CHUNK) {
        let mut xs = Vec::new();
        for it in chunk {
            check_geometry(spec, cfg, &it.image)?;
            xs.push(model_input(&it.image, cfg)?);
        }
        let (c, s) = (spec.in_channels, cfg.image_size);
        let batch = Tensor::new(&[chunk.len(), c, s, s], xs.iter().flat_map(|t| t.data().iter().copied()).collect())?;
        let probs = model.predict(&batch)?;
        for (it, p) in chunk.iter().zip(probs.data().chunks_exact(s * s)) {
            let truth = it.truth.as_ref().ok_or_else(|| Error::Usage(format!("{} has no truth mask", it.id)))?;
            let prob = Tensor::new(&[1, 1, s, s], p.to_vec())?;
            let pred = threshold(&prob, cfg.eval_threshold)?;
            let counts = DiceCounts::of(&pred, truth);
            pooled.add(counts);
            let t = truth.to_tensor().reshape(&[1, 1, s, s])?;
            let (bce, loss) = score_probabilities(&prob, &t, &cfg.loss)?;
            per_sample.push(SampleMetrics { sample_id: it.id.clone(), dice: counts.dice(), bce, loss });
        }
    }
    let mean_dice = per_sample.iter().map(|m| m.dice).sum::<f64>() / per_sample.len() as f64;
    Ok(EvalReport { dice: pooled.dice(), mean_dice, per_sample })
}

/// Trains on `train`, then scores the held-back `val` split.
pub fn train_fold(
    train: &[TrainItem],
    val: &[TrainItem],
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    if val.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    let FitOutcome { model, epoch_losses } = fit(train, spec, cfg)?;
    let validation = evaluate(&model, val, cfg)?;
    let error = 1.0 - validation.dice;
    Ok(FoldOutcome { model, epoch_losses, validation, error })
}
