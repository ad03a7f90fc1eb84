//! Finite-difference verification of every differentiable operation, and
//! of the full training loss through the network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{gradcheck_with, Conv2dParams, GradcheckOptions, Tape, Var};
use crate::error::Result;
use crate::metrics::{bce, composite_loss, sigmoid, soft_dice, LossConfig};
use crate::model::{Model, NetworkSpec};
use crate::tensor::Tensor;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-3;
pub const END_TO_END_TOLERANCE: f64 = 5e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub seeds: u64,
    /// Worst relative error over all seeds.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seeds: u64,
    /// Coordinates sampled per seed in the end-to-end check.
    pub end_to_end_coordinates: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seeds: 20, end_to_end_coordinates: 1000 }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// Magnitudes in `[0.05, 1)` with random sign, away from the relu kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05f32..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Scalarizes `y` with fixed random weights so each output element carries
/// a distinct gradient.
fn weighted_sum(t: &Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_tensor(&mut rng, &t.shape(y), -1.0, 1.0);
    let wv = t.constant(&w);
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

type Case = Box<dyn Fn(u64) -> Result<f64>>;

fn full<F: Fn(&Tape, &[Var]) -> Result<Var>>(f: F, inputs: &[Tensor]) -> Result<f64> {
    gradcheck_with(f, inputs, &GradcheckOptions::default()).map(|r| r.max_rel_error)
}

fn conv_case(x: &'static [usize], w: &'static [usize], p: Conv2dParams, bias: bool) -> Case {
    Box::new(move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = vec![rand_tensor(&mut rng, x, -1.0, 1.0), rand_tensor(&mut rng, w, -1.0, 1.0)];
        if bias {
            inputs.push(rand_tensor(&mut rng, &[w[0]], -1.0, 1.0));
        }
        full(
            |t, v| {
                let y = t.conv2d(v[0], v[1], v.get(2).copied(), p)?;
                weighted_sum(t, y, seed)
            },
            &inputs,
        )
    })
}

fn unary(shape: &'static [usize], lo: f32, hi: f32, op: fn(&Tape, Var) -> Result<Var>) -> Case {
    Box::new(move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, shape, lo, hi);
        full(|t, v| weighted_sum(t, op(t, v[0])?, seed), &[x])
    })
}

fn binary(a: &'static [usize], b: &'static [usize], op: fn(&Tape, Var, Var) -> Result<Var>) -> Case {
    Box::new(move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ins = [rand_tensor(&mut rng, a, -1.0, 1.0), rand_tensor(&mut rng, b, 0.0, 1.0)];
        full(|t, v| weighted_sum(t, op(t, v[0], v[1])?, seed), &ins)
    })
}

/// Probabilities and soft targets for the loss checks.
fn loss_inputs(seed: u64) -> (Tensor, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = rand_tensor(&mut rng, &[1, 1, 8, 8], -3.0, 3.0);
    let probs = Tensor::new(&[1, 1, 8, 8], logits.data().iter().map(|&z| sigmoid(z)).collect()).expect("shape matches");
    let gt = rand_tensor(&mut rng, &[1, 1, 8, 8], 0.0, 1.0);
    (logits, probs, gt)
}

fn primitive_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d", conv_case(&[1, 2, 5, 5], &[3, 2, 3, 3], Conv2dParams::new(1, 1, 1), true)),
        ("conv2d strided", conv_case(&[1, 2, 6, 6], &[2, 2, 3, 3], Conv2dParams::new(2, 1, 1), false)),
        ("conv2d grouped", conv_case(&[1, 4, 5, 5], &[4, 2, 3, 3], Conv2dParams::new(1, 1, 2), true)),
        ("conv2d depthwise", conv_case(&[2, 3, 5, 5], &[3, 1, 3, 3], Conv2dParams::new(1, 1, 3), true)),
        ("conv2d pointwise", conv_case(&[2, 3, 4, 4], &[5, 3, 1, 1], Conv2dParams::new(1, 0, 1), true)),
        (
            "add/mul",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ins = [rand_tensor(&mut rng, &[3, 4], -1.0, 1.0), rand_tensor(&mut rng, &[3, 4], -1.0, 1.0)];
                full(
                    |t, v| {
                        let p = t.mul(v[0], v[1])?;
                        let q = t.add(p, v[0])?;
                        weighted_sum(t, q, seed)
                    },
                    &ins,
                )
            }),
        ),
        (
            "scale/sum/mean",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = rand_tensor(&mut rng, &[5], -1.0, 1.0);
                full(
                    |t, v| {
                        let a = t.scale(v[0], -1.5);
                        let sq = t.mul(a, v[0])?;
                        let m = t.mean(sq);
                        let tot = t.sum(v[0]);
                        t.linear_combination(&[(m, 2.0), (tot, 0.5)], 0.25)
                    },
                    &[x],
                )
            }),
        ),
        ("sigmoid", unary(&[2, 6], -4.0, 4.0, |t, x| Ok(t.sigmoid(x)))),
        (
            "relu",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = away_from_zero(&mut rng, &[2, 6]);
                full(|t, v| weighted_sum(t, t.relu(v[0]), seed), &[x])
            }),
        ),
        (
            "swish",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ins = [rand_tensor(&mut rng, &[2, 5], -3.0, 3.0), rand_tensor(&mut rng, &[1], 0.3, 2.0)];
                full(|t, v| weighted_sum(t, t.swish(v[0], v[1])?, seed), &ins)
            }),
        ),
        ("global average pool", unary(&[2, 3, 3, 4], -1.0, 1.0, |t, x| t.global_avg_pool(x))),
        ("scale channels", binary(&[2, 3, 3, 3], &[2, 3, 1, 1], |t, x, g| t.scale_channels(x, g))),
        ("concat channels", binary(&[2, 2, 3, 3], &[2, 1, 3, 3], |t, a, b| t.concat_channels(a, b))),
        ("upsample bilinear", unary(&[1, 2, 3, 4], -1.0, 1.0, |t, x| t.upsample_bilinear(x, 2))),
        (
            "bce",
            Box::new(|seed| {
                let (_, probs, gt) = loss_inputs(seed);
                full(|t, v| bce(t, v[0], &gt, 1e-7), &[probs])
            }),
        ),
        (
            "soft dice",
            Box::new(|seed| {
                let (_, probs, gt) = loss_inputs(seed);
                full(|t, v| soft_dice(t, v[0], &gt, 1e-6), &[probs])
            }),
        ),
        (
            "composite loss",
            Box::new(|seed| {
                let (logits, _, gt) = loss_inputs(seed);
                let cfg = LossConfig::default();
                full(|t, v| composite_loss(t, v[0], &gt, &cfg), &[logits])
            }),
        ),
    ]
}

/// `composite_loss(model(x))` on a `1×1×16×16` input, differentiated with
/// respect to the input and every parameter.
pub fn end_to_end_error(seed: u64, max_coordinates: usize) -> Result<f64> {
    let spec = NetworkSpec::tiny();
    let model = Model::new(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[1, spec.in_channels, 16, 16], -1.0, 1.0);
    let gt = rand_tensor(&mut rng, &[1, 1, 16, 16], 0.0, 1.0);
    let mut inputs = vec![x];
    inputs.extend(model.params().named().map(|(_, t)| t.clone()));
    let opts = GradcheckOptions { max_coordinates: Some(max_coordinates), seed, ..GradcheckOptions::default() };
    let cfg = LossConfig::default();
    let rep = gradcheck_with(
        |t, v| {
            let logits = model.forward_with(t, &v[1..], v[0])?;
            composite_loss(t, logits, &gt, &cfg)
        },
        &inputs,
        &opts,
    )?;
    Ok(rep.max_rel_error)
}

fn outcome(name: &str, seeds: u64, tolerance: f64, case: impl Fn(u64) -> Result<f64>) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let e = case(seed)?;
        // NaN must fail, so no f64::max here.
        worst = if e.is_nan() || e > worst { e } else { worst };
    }
    Ok(CheckOutcome { name: name.to_string(), seeds, max_rel_error: worst, tolerance, passed: worst <= tolerance })
}

/// Runs every primitive check, then the end-to-end check last.
pub fn gradcheck_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (name, case) in primitive_cases() {
        out.push(outcome(name, opts.seeds, PRIMITIVE_TOLERANCE, case)?);
    }
    let coords = opts.end_to_end_coordinates;
    out.push(outcome("network end to end", opts.seeds, END_TO_END_TOLERANCE, |s| end_to_end_error(s, coords))?);
    Ok(out)
}
