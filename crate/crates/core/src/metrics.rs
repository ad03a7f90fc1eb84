//! Dice evaluation metric and the differentiable BCE / soft-Dice losses.

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid_f32, Tape, Var};
use crate::error::{Error, Result};
use crate::labels::HardMask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub bce_weight: f32,
    pub dice_weight: f32,
    pub dice_smooth: f32,
    pub prob_clamp: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { bce_weight: 0.5, dice_weight: 0.5, dice_smooth: 1e-6, prob_clamp: 1e-7 }
    }
}

impl LossConfig {
    // Negated comparisons so NaN fails validation too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.bce_weight >= 0.0) {
            return Err(Error::config("loss.bce_weight", "must be >= 0"));
        }
        if !(self.dice_weight >= 0.0) {
            return Err(Error::config("loss.dice_weight", "must be >= 0"));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::config("loss.dice_smooth", "must be > 0"));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(Error::config("loss.prob_clamp", "must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

/// `2|X∩Y| / (|X| + |Y|)`; two empty masks score 1.
pub fn dice_coefficient(pred: &HardMask, truth: &HardMask) -> Result<f64> {
    if !pred.same_shape(truth) {
        return Err(Error::dim(
            "dice_coefficient",
            "shape",
            format!("{}x{}", truth.height(), truth.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let counts = DiceCounts::of(pred, truth);
    Ok(counts.dice())
}

/// Running intersection and size totals, for pooled Dice over many masks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DiceCounts {
    pub intersection: u64,
    pub pred: u64,
    pub truth: u64,
}

impl DiceCounts {
    pub fn of(pred: &HardMask, truth: &HardMask) -> Self {
        let mut c = Self::default();
        for (&p, &t) in pred.values().iter().zip(truth.values()) {
            c.intersection += (p & t) as u64;
            c.pred += p as u64;
            c.truth += t as u64;
        }
        c
    }

    pub fn add(&mut self, other: DiceCounts) {
        self.intersection += other.intersection;
        self.pred += other.pred;
        self.truth += other.truth;
    }

    pub fn dice(&self) -> f64 {
        let denom = self.pred + self.truth;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }
}

/// `1` where the probability is strictly above `t`. Accepts `H×W` or any
/// tensor whose last two axes are `H×W` with singleton leading axes.
pub fn threshold(pred: &Tensor, t: f32) -> Result<HardMask> {
    let s = pred.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::dim("threshold", "shape", "[.., H, W] with unit leading axes", format!("{s:?}")));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Value(format!("threshold {t} outside (0, 1)")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    HardMask::from_values(h, w, pred.data().iter().map(|&v| (v > t) as u8).collect())
}

fn check_truth(op: &'static str, tape: &Tape, pred: Var, truth: &Tensor) -> Result<()> {
    let ps = tape.shape(pred);
    if ps != truth.shape() {
        return Err(Error::dim(op, "shape", format!("{ps:?}"), format!("{:?}", truth.shape())));
    }
    if let Some(v) = truth.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Value(format!("{op}: target value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Mean binary cross-entropy with `P` clamped to `[clamp, 1 - clamp]`.
/// Soft targets are allowed.
pub fn bce(tape: &Tape, pred: Var, truth: &Tensor, clamp: f32) -> Result<Var> {
    check_truth("bce", tape, pred, truth)?;
    let p = tape.value(pred);
    let t = truth.data().to_vec();
    let n = p.len();
    let (lo, hi) = (clamp, 1.0 - clamp);
    let total: f64 = p
        .iter()
        .zip(&t)
        .map(|(&p, &g)| {
            let pc = p.clamp(lo, hi) as f64;
            -(g as f64 * pc.ln() + (1.0 - g as f64) * (1.0 - pc).ln())
        })
        .sum();
    Ok(tape.record(vec![1], vec![(total / n as f64) as f32], &[pred], move |g, _| {
        let scale = g[0] as f64 / n as f64;
        vec![Some(
            p.iter()
                .zip(&t)
                .map(|(&p, &gt)| {
                    if p < lo || p > hi {
                        return 0.0;
                    }
                    let (p, gt) = (p as f64, gt as f64);
                    (scale * ((1.0 - gt) / (1.0 - p) - gt / p)) as f32
                })
                .collect(),
        )]
    }))
}

/// Per-sample smooth Dice `(2ΣPG + s) / (ΣP + ΣG + s)` over the leading
/// (batch) axis; returns an `[N]` vector.
pub fn soft_dice_per_sample(tape: &Tape, pred: Var, truth: &Tensor, smooth: f32) -> Result<Var> {
    let ps = tape.shape(pred);
    if ps != truth.shape() {
        return Err(Error::dim("soft_dice", "shape", format!("{ps:?}"), format!("{:?}", truth.shape())));
    }
    let n = ps[0];
    let per = truth.numel() / n;
    let p = tape.value(pred);
    let t = truth.data().to_vec();
    let s = smooth as f64;
    let sums: Vec<(f64, f64)> = p
        .chunks_exact(per)
        .zip(t.chunks_exact(per))
        .map(|(pc, tc)| {
            let inter: f64 = pc.iter().zip(tc).map(|(&a, &b)| a as f64 * b as f64).sum();
            let total: f64 = pc.iter().map(|&a| a as f64).sum::<f64>() + tc.iter().map(|&b| b as f64).sum::<f64>();
            (2.0 * inter + s, total + s)
        })
        .collect();
    let out = sums.iter().map(|(num, den)| (num / den) as f32).collect();
    Ok(tape.record(vec![n], out, &[pred], move |g, _| {
        let mut grad = Vec::with_capacity(p.len());
        for ((gs, tc), &(num, den)) in g.iter().zip(t.chunks_exact(per)).zip(&sums) {
            // d/dP_i (num/den) = 2 G_i / den - num / den^2
            let (a, b) = (2.0 / den, num / (den * den));
            grad.extend(tc.iter().map(|&gt| (*gs as f64 * (a * gt as f64 - b)) as f32));
        }
        vec![Some(grad)]
    }))
}

/// Batch mean of [`soft_dice_per_sample`].
pub fn soft_dice(tape: &Tape, pred: Var, truth: &Tensor, smooth: f32) -> Result<Var> {
    let per = soft_dice_per_sample(tape, pred, truth, smooth)?;
    Ok(tape.mean(per))
}

/// Components of the composite loss, kept for reporting.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub loss: Var,
    pub bce: Var,
    pub dice: Var,
}

/// `bce_weight·BCE(σ(z), G) + dice_weight·(1 − Dice(σ(z), G))`, with
/// Dice averaged per sample over the batch.
pub fn composite_loss_terms(tape: &Tape, logits: Var, truth: &Tensor, cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    let probs = tape.sigmoid(logits);
    let bce_v = bce(tape, probs, truth, cfg.prob_clamp)?;
    let dice_v = soft_dice(tape, probs, truth, cfg.dice_smooth)?;
    let loss = tape.linear_combination(&[(bce_v, cfg.bce_weight), (dice_v, -cfg.dice_weight)], cfg.dice_weight)?;
    Ok(LossTerms { loss, bce: bce_v, dice: dice_v })
}

pub fn composite_loss(tape: &Tape, logits: Var, truth: &Tensor, cfg: &LossConfig) -> Result<Var> {
    composite_loss_terms(tape, logits, truth, cfg).map(|t| t.loss)
}

/// Non-differentiable `(bce, loss)` for probability maps.
pub fn score_probabilities(probs: &Tensor, truth: &Tensor, cfg: &LossConfig) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let p = tape.constant(probs);
    let b = bce(&tape, p, truth, cfg.prob_clamp)?;
    let d = soft_dice(&tape, p, truth, cfg.dice_smooth)?;
    let (b, d) = (tape.scalar_value(b) as f64, tape.scalar_value(d) as f64);
    Ok((b, cfg.bce_weight as f64 * b + cfg.dice_weight as f64 * (1.0 - d)))
}

/// Inverse of the logistic function, for building logits from probabilities.
pub fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

#[doc(hidden)]
pub fn sigmoid(x: f32) -> f32 {
    sigmoid_f32(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> HardMask {
        HardMask::from_fn(h, w, |r, c| on.contains(&(r, c)))
    }

    #[test]
    fn dice_cases() {
        let a = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let b = mask(4, 4, &[(2, 2), (2, 3)]);
        let c = mask(4, 4, &[(0, 0), (0, 1), (3, 0), (3, 1)]);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.0);
        assert_eq!(dice_coefficient(&a, &c).unwrap(), 0.5);
        let e = HardMask::zeros(4, 4);
        assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
        assert!(matches!(dice_coefficient(&a, &HardMask::zeros(3, 4)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn bce_closed_forms() {
        let tape = Tape::new();
        let gt = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let half = tape.constant(&Tensor::full(&[1, 1, 2, 2], 0.5));
        let v = tape.scalar_value(bce(&tape, half, &gt, 1e-7).unwrap());
        assert!((v - std::f32::consts::LN_2).abs() < 1e-6);

        let perfect = tape.constant(&gt);
        assert!(tape.scalar_value(bce(&tape, perfect, &gt, 1e-7).unwrap()) <= 2e-6);

        let one = Tensor::full(&[1], 1.0);
        let quarter = tape.constant(&Tensor::full(&[1], 0.25));
        let v = tape.scalar_value(bce(&tape, quarter, &one, 1e-7).unwrap());
        assert!((v - 1.386294).abs() < 1e-5);
    }

    #[test]
    fn bce_rejects_out_of_range_targets() {
        let tape = Tape::new();
        let p = tape.constant(&Tensor::full(&[2], 0.5));
        let bad = Tensor::new(&[2], vec![0.0, 1.5]).unwrap();
        assert!(matches!(bce(&tape, p, &bad, 1e-7), Err(Error::Value(_))));
    }

    #[test]
    fn soft_dice_closed_forms() {
        let tape = Tape::new();
        let ones = Tensor::full(&[1, 1, 4, 4], 1.0);
        let half = tape.constant(&Tensor::full(&[1, 1, 4, 4], 0.5));
        let v = tape.scalar_value(soft_dice(&tape, half, &ones, 1e-6).unwrap());
        assert!((v - 0.666667).abs() < 1e-5);
        let same = tape.constant(&ones);
        assert!((tape.scalar_value(soft_dice(&tape, same, &ones, 1e-9).unwrap()) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn composite_closed_form() {
        let tape = Tape::new();
        let ones = Tensor::full(&[1, 1, 4, 4], 1.0);
        let zero_logits = tape.constant(&Tensor::zeros(&[1, 1, 4, 4]));
        let v = tape.scalar_value(composite_loss(&tape, zero_logits, &ones, &LossConfig::default()).unwrap());
        assert!((v - 0.513240).abs() < 1e-5, "{v}");
    }

    #[test]
    fn near_perfect_logits_give_tiny_loss() {
        let tape = Tape::new();
        let gt = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let z: Vec<f32> = gt.data().iter().map(|&g| if g > 0.5 { 20.0 } else { -20.0 }).collect();
        let logits = tape.constant(&Tensor::new(&[1, 1, 2, 2], z).unwrap());
        assert!(tape.scalar_value(composite_loss(&tape, logits, &gt, &LossConfig::default()).unwrap()) <= 1e-3);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold(&Tensor::full(&[3, 3], 0.5), 0.5).unwrap().count(), 0);
        assert_eq!(threshold(&Tensor::full(&[3, 3], 0.9), 0.5).unwrap().count(), 9);
        let m = threshold(&Tensor::new(&[1, 2], vec![0.4, 0.6]).unwrap(), 0.5).unwrap();
        assert_eq!(m.values(), &[0, 1]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = Tensor::new(&[1, 1, 8, 8], (0..64).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let gt = Tensor::new(&[1, 1, 8, 8], (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let cfg = LossConfig::default();
            let err = gradcheck(|t, v| composite_loss(t, v[0], &gt, &cfg), std::slice::from_ref(&logits)).unwrap();
            assert!(err <= 1e-3, "composite seed {seed}: {err}");
            let probs = Tensor::new(&[1, 1, 8, 8], logits.data().iter().map(|&z| sigmoid(z)).collect()).unwrap();
            let err = gradcheck(|t, v| soft_dice(t, v[0], &gt, 1e-6), std::slice::from_ref(&probs)).unwrap();
            assert!(err <= 1e-3, "soft dice seed {seed}: {err}");
            let err = gradcheck(|t, v| bce(t, v[0], &gt, 1e-7), &[probs]).unwrap();
            assert!(err <= 1e-3, "bce seed {seed}: {err}");
        }
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (proptest::collection::vec(0u8..=1, 36), proptest::collection::vec(0u8..=1, 36))
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bounded((a, b) in arb_pair()) {
            let (x, y) = (HardMask::from_values(6, 6, a).unwrap(), HardMask::from_values(6, 6, b).unwrap());
            let (d1, d2) = (dice_coefficient(&x, &y).unwrap(), dice_coefficient(&y, &x).unwrap());
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&d1));
            prop_assert_eq!(d1 == 1.0, x == y);
        }

        #[test]
        fn composite_is_weighted_sum_and_nonnegative(z in proptest::collection::vec(-6.0f32..6.0, 16),
                                                     g in proptest::collection::vec(0.0f32..=1.0, 16)) {
            let tape = Tape::new();
            let logits = tape.constant(&Tensor::new(&[1, 1, 4, 4], z).unwrap());
            let gt = Tensor::new(&[1, 1, 4, 4], g).unwrap();
            let cfg = LossConfig::default();
            let terms = composite_loss_terms(&tape, logits, &gt, &cfg).unwrap();
            let (l, b, d) = (tape.scalar_value(terms.loss), tape.scalar_value(terms.bce), tape.scalar_value(terms.dice));
            prop_assert!(l >= 0.0);
            prop_assert!((l - (0.5 * b + 0.5 * (1.0 - d))).abs() < 1e-6);
        }

        #[test]
        fn losses_invariant_under_pixel_permutation(p in proptest::collection::vec(0.01f32..0.99, 12),
                                                    g in proptest::collection::vec(0.0f32..=1.0, 12),
                                                    shift in 1usize..12) {
            let rot = |v: &[f32]| { let mut v = v.to_vec(); v.rotate_left(shift); v };
            let eval = |p: Vec<f32>, g: Vec<f32>| {
                let tape = Tape::new();
                let pv = tape.constant(&Tensor::new(&[1, 1, 3, 4], p).unwrap());
                let gt = Tensor::new(&[1, 1, 3, 4], g).unwrap();
                (tape.scalar_value(bce(&tape, pv, &gt, 1e-7).unwrap()), tape.scalar_value(soft_dice(&tape, pv, &gt, 1e-6).unwrap()))
            };
            let (b1, d1) = eval(p.clone(), g.clone());
            let (b2, d2) = eval(rot(&p), rot(&g));
            prop_assert!((b1 - b2).abs() < 1e-6);
            prop_assert!((d1 - d2).abs() < 1e-6);
        }
    }
}
