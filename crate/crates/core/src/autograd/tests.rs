use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-3;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for kinks such as relu.
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
    Tensor::new(shape, data).unwrap()
}

/// Collapses a tensor output to a scalar with fixed random weights, so every
/// output element contributes a distinct gradient.
fn weighted_sum(t: &Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_tensor(&mut rng, &t.shape(y), -1.0, 1.0);
    let wv = t.constant(&w);
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

fn check_seeds(name: &str, mut case: impl FnMut(u64) -> f64) {
    for seed in 0..SEEDS {
        let err = case(seed);
        assert!(err <= TOL, "{name} seed {seed}: relative error {err}");
    }
}

fn conv_case(seed: u64, x: &[usize], w: &[usize], p: Conv2dParams, bias: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![rand_tensor(&mut rng, x, -1.0, 1.0), rand_tensor(&mut rng, w, -1.0, 1.0)];
    if bias {
        inputs.push(rand_tensor(&mut rng, &[w[0]], -1.0, 1.0));
    }
    gradcheck(
        |t, v| {
            let y = t.conv2d(v[0], v[1], v.get(2).copied(), p)?;
            weighted_sum(t, y, seed)
        },
        &inputs,
    )
    .unwrap()
}

#[test]
fn conv_window_sum_and_identity() {
    let t = Tape::new();
    let x = t.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = t.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = t.conv2d(x, w, None, Conv2dParams::new(1, 1, 1)).unwrap();
    assert_eq!(t.shape(y), [1, 1, 3, 3]);
    let v = t.value(y);
    assert_eq!(v[4], 9.0);
    assert_eq!(v[0], 4.0);
    assert_eq!(v[1], 6.0);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = rand_tensor(&mut rng, &[2, 1, 5, 7], -2.0, 2.0);
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let x = t.constant(&img);
    let w = t.constant(&Tensor::new(&[1, 1, 3, 3], k).unwrap());
    let y = t.conv2d(x, w, None, Conv2dParams::new(1, 1, 1)).unwrap();
    assert_eq!(t.value(y).as_slice(), img.data());
}

#[test]
fn conv_output_arithmetic() {
    for (h, k, s, p) in [(5, 3, 1, 0), (5, 3, 2, 1), (8, 3, 2, 1), (7, 5, 2, 2), (6, 1, 1, 0), (9, 3, 3, 0)] {
        let t = Tape::new();
        let x = t.constant(&Tensor::zeros(&[1, 2, h, h + 1]));
        let w = t.constant(&Tensor::zeros(&[3, 2, k, k]));
        let y = t.conv2d(x, w, None, Conv2dParams::new(s, p, 1)).unwrap();
        assert_eq!(t.shape(y), [1, 3, (h + 2 * p - k) / s + 1, (h + 1 + 2 * p - k) / s + 1]);
    }
}

/// Direct-loop oracle for grouped convolution.
fn conv_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: Conv2dParams) -> Vec<f32> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [co, cig, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * p.padding - kh) / p.stride + 1;
    let ow = (wd + 2 * p.padding - kw) / p.stride + 1;
    let cog = co / p.groups;
    let mut out = Vec::new();
    for ni in 0..n {
        for o in 0..co {
            let g = o / cog;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map(|b| b.data()[o] as f64).unwrap_or(0.0);
                    for ci in 0..cig {
                        let cin = g * cig + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + cin) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((o * cig + ci) * kh + ky) * kw + kx];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_direct_loop_oracle() {
    let cases: &[(&[usize], &[usize], Conv2dParams)] = &[
        (&[2, 3, 7, 6], &[4, 3, 3, 3], Conv2dParams::new(1, 1, 1)),
        (&[1, 4, 8, 8], &[6, 2, 3, 3], Conv2dParams::new(2, 1, 2)),
        (&[2, 5, 9, 7], &[5, 1, 3, 3], Conv2dParams::new(1, 1, 5)),
        (&[1, 6, 8, 9], &[6, 1, 5, 5], Conv2dParams::new(2, 2, 6)),
        (&[2, 3, 4, 5], &[7, 3, 1, 1], Conv2dParams::new(1, 0, 1)),
        (&[1, 2, 6, 6], &[3, 2, 3, 3], Conv2dParams::new(3, 0, 1)),
    ];
    for (seed, &(xs, ws, p)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let x = rand_tensor(&mut rng, xs, -1.0, 1.0);
        let w = rand_tensor(&mut rng, ws, -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[ws[0]], -1.0, 1.0);
        let t = Tape::new();
        let (xv, wv, bv) = (t.constant(&x), t.constant(&w), t.constant(&b));
        let y = t.conv2d(xv, wv, Some(bv), p).unwrap();
        let expect = conv_oracle(&x, &w, Some(&b), p);
        for (a, e) in t.value(y).iter().zip(&expect) {
            assert!((a - e).abs() <= 1e-5, "case {seed}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_weight_gradient_on_small_input() {
    check_seeds("conv 1x2x5x5", |s| conv_case(s, &[1, 2, 5, 5], &[3, 2, 3, 3], Conv2dParams::new(1, 1, 1), true));
}

#[test]
fn conv_variants_gradcheck() {
    check_seeds("strided", |s| conv_case(s, &[1, 2, 6, 6], &[2, 2, 3, 3], Conv2dParams::new(2, 1, 1), false));
    check_seeds("grouped", |s| conv_case(s, &[1, 4, 5, 5], &[4, 2, 3, 3], Conv2dParams::new(1, 1, 2), true));
    check_seeds("depthwise", |s| conv_case(s, &[2, 3, 5, 5], &[3, 1, 3, 3], Conv2dParams::new(1, 1, 3), true));
    check_seeds("depthwise strided", |s| conv_case(s, &[1, 3, 6, 6], &[3, 1, 3, 3], Conv2dParams::new(2, 1, 3), false));
    check_seeds("pointwise", |s| conv_case(s, &[2, 3, 4, 4], &[5, 3, 1, 1], Conv2dParams::new(1, 0, 1), true));
}

#[test]
fn conv_rejects_bad_geometry() {
    let t = Tape::new();
    let x = t.constant(&Tensor::zeros(&[1, 3, 5, 5]));
    let w = t.constant(&Tensor::zeros(&[4, 2, 3, 3]));
    assert!(matches!(t.conv2d(x, w, None, Conv2dParams::new(1, 1, 1)), Err(Error::Dimension { .. })));
    let w = t.constant(&Tensor::zeros(&[4, 3, 3, 3]));
    assert!(matches!(t.conv2d(x, w, None, Conv2dParams::new(0, 1, 1)), Err(Error::Usage(_))));
    assert!(t.conv2d(x, w, None, Conv2dParams::new(1, 1, 2)).is_err());
    let b = t.constant(&Tensor::zeros(&[3]));
    assert!(matches!(t.conv2d(x, w, Some(b), Conv2dParams::new(1, 1, 1)), Err(Error::Dimension { .. })));
    let x3 = t.constant(&Tensor::zeros(&[3, 5, 5]));
    assert!(matches!(t.conv2d(x3, w, None, Conv2dParams::default()), Err(Error::Dimension { .. })));
}

#[test]
fn swish_closed_forms() {
    let t = Tape::new();
    let x = t.variable(&Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
    let beta = t.variable(&Tensor::scalar(1.0));
    let y = t.swish(x, beta).unwrap();
    let v = t.value(y);
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 0.731_058_6).abs() < 1e-6);
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    let gx = g.get(x).unwrap();
    assert!((gx[0] - 0.5).abs() < 1e-7);
    assert!(g.get(beta).is_some());
}

#[test]
fn swish_rejects_non_scalar_or_non_finite_beta() {
    let t = Tape::new();
    let x = t.variable(&Tensor::zeros(&[3]));
    let b = t.variable(&Tensor::zeros(&[2]));
    assert!(matches!(t.swish(x, b), Err(Error::Dimension { .. })));
    let b = t.variable(&Tensor::scalar(f32::NAN));
    assert!(t.swish(x, b).is_err());
}

#[test]
fn sigmoid_and_pool_closed_forms() {
    let t = Tape::new();
    let z = t.variable(&Tensor::scalar(0.0));
    let s = t.sigmoid(z);
    assert_eq!(t.scalar_value(s), 0.5);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(z).unwrap()[0], 0.25);

    let x = t.constant(&Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = t.global_avg_pool(x).unwrap();
    assert_eq!(t.shape(p), [1, 1, 1, 1]);
    assert_eq!(t.scalar_value(p), 2.5);
}

#[test]
fn sigmoid_matches_reference_exponential() {
    let mut worst = 0.0f64;
    for i in -20_000..=20_000 {
        let x = i as f32 * 0.004;
        let reference = 1.0 / (1.0 + (-(x as f64)).exp());
        let got = sigmoid_f32(x) as f64;
        worst = worst.max((got - reference).abs() / reference);
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
    assert_eq!(sigmoid_f32(200.0), 1.0);
    assert!(sigmoid_f32(-200.0) >= 0.0 && sigmoid_f32(-200.0) < 1e-37);
}

#[test]
fn upsample_keeps_constant_fields() {
    let t = Tape::new();
    let x = t.constant(&Tensor::full(&[2, 3, 4, 5], 1.75));
    let y = t.upsample_bilinear(x, 2).unwrap();
    assert_eq!(t.shape(y), [2, 3, 8, 10]);
    assert!(t.value(y).iter().all(|&v| v == 1.75));
}

#[test]
fn upsample_interpolates_half_pixel_centres() {
    let t = Tape::new();
    let x = t.constant(&Tensor::new(&[1, 1, 1, 2], vec![0.0, 4.0]).unwrap());
    let y = t.upsample_bilinear(x, 2).unwrap();
    // Output centres map to input coordinates -0.25, 0.25, 0.75, 1.25.
    assert_eq!(t.value(y).as_slice(), &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
}

#[test]
fn elementwise_and_shape_errors() {
    let t = Tape::new();
    let a = t.constant(&Tensor::zeros(&[2, 3]));
    let b = t.constant(&Tensor::zeros(&[3, 2]));
    assert!(matches!(t.add(a, b), Err(Error::Dimension { .. })));
    assert!(matches!(t.mul(a, b), Err(Error::Dimension { .. })));
    let x = t.constant(&Tensor::zeros(&[1, 2, 4, 4]));
    let y = t.constant(&Tensor::zeros(&[1, 2, 3, 4]));
    assert!(matches!(t.concat_channels(x, y), Err(Error::Dimension { .. })));
    let gate = t.constant(&Tensor::zeros(&[1, 3, 1, 1]));
    assert!(matches!(t.scale_channels(x, gate), Err(Error::Dimension { .. })));
}

#[test]
fn primitive_gradchecks() {
    check_seeds("add/mul", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [rand_tensor(&mut rng, &[3, 4], -1.0, 1.0), rand_tensor(&mut rng, &[3, 4], -1.0, 1.0)];
        gradcheck(
            |t, v| {
                let p = t.mul(v[0], v[1])?;
                let q = t.add(p, v[0])?;
                weighted_sum(t, q, s)
            },
            &ins,
        )
        .unwrap()
    });
    check_seeds("scale/sum/mean", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [rand_tensor(&mut rng, &[5], -1.0, 1.0)];
        gradcheck(
            |t, v| {
                let a = t.scale(v[0], -1.5);
                let sq = t.mul(a, v[0])?;
                let m = t.mean(sq);
                let tot = t.sum(v[0]);
                t.linear_combination(&[(m, 2.0), (tot, 0.5)], 0.25)
            },
            &ins,
        )
        .unwrap()
    });
    check_seeds("sigmoid", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [rand_tensor(&mut rng, &[2, 6], -4.0, 4.0)];
        gradcheck(|t, v| weighted_sum(t, t.sigmoid(v[0]), s), &ins).unwrap()
    });
    check_seeds("relu", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [away_from_zero(&mut rng, &[2, 6])];
        gradcheck(|t, v| weighted_sum(t, t.relu(v[0]), s), &ins).unwrap()
    });
    check_seeds("swish x and beta", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [rand_tensor(&mut rng, &[2, 5], -3.0, 3.0), rand_tensor(&mut rng, &[1], 0.3, 2.0)];
        gradcheck(|t, v| weighted_sum(t, t.swish(v[0], v[1])?, s), &ins).unwrap()
    });
    check_seeds("global average pool", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [rand_tensor(&mut rng, &[2, 3, 3, 4], -1.0, 1.0)];
        gradcheck(|t, v| weighted_sum(t, t.global_avg_pool(v[0])?, s), &ins).unwrap()
    });
    check_seeds("scale channels", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [rand_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0), rand_tensor(&mut rng, &[2, 3, 1, 1], 0.0, 1.0)];
        gradcheck(|t, v| weighted_sum(t, t.scale_channels(v[0], v[1])?, s), &ins).unwrap()
    });
    check_seeds("concat channels", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [rand_tensor(&mut rng, &[2, 2, 3, 3], -1.0, 1.0), rand_tensor(&mut rng, &[2, 1, 3, 3], -1.0, 1.0)];
        gradcheck(|t, v| weighted_sum(t, t.concat_channels(v[0], v[1])?, s), &ins).unwrap()
    });
    check_seeds("upsample", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ins = [rand_tensor(&mut rng, &[1, 2, 3, 4], -1.0, 1.0)];
        gradcheck(|t, v| weighted_sum(t, t.upsample_bilinear(v[0], 2)?, s), &ins).unwrap()
    });
}

#[test]
fn gradcheck_of_linear_function_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[4, 4], -1.0, 1.0);
    let err = gradcheck(|t, v| Ok(t.sum(v[0])), &[x]).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_rejects_non_scalar_functions() {
    let x = Tensor::zeros(&[3]);
    assert!(matches!(gradcheck(|t, v| Ok(t.scale(v[0], 2.0)), &[x]), Err(Error::Usage(_))));
}

#[test]
fn gradcheck_detects_a_wrong_gradient() {
    // relu evaluated across its kink: the one-sided analytic slope cannot
    // match the central difference at the origin.
    let x = Tensor::new(&[1], vec![0.0]).unwrap();
    let err = gradcheck(|t, v| Ok(t.sum(t.relu(v[0]))), &[x]).unwrap();
    assert!(err > 0.1, "{err}");
}

#[test]
fn subsampled_gradcheck_reports_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[10, 10], -1.0, 1.0);
    let opts = GradcheckOptions { max_coordinates: Some(17), ..GradcheckOptions::default() };
    let rep = gradcheck_with(|t, v| weighted_sum(t, t.sigmoid(v[0]), 9), &[x], &opts).unwrap();
    assert_eq!(rep.coordinates_checked, 17);
    assert!(rep.max_rel_error <= TOL);
}

#[test]
fn backward_twice_accumulates_twice() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut w = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0).with_grad();
    let t = Tape::new();
    let wv = t.leaf(&w);
    let sq = t.mul(wv, wv).unwrap();
    let loss = t.sum(sq);
    let g1 = t.backward(loss).unwrap();
    let g2 = t.backward(loss).unwrap();
    w.accumulate_grad(g1.get(wv).unwrap()).unwrap();
    let once = w.grad().unwrap().to_vec();
    w.accumulate_grad(g2.get(wv).unwrap()).unwrap();
    for (a, b) in w.grad().unwrap().iter().zip(&once) {
        assert_eq!(*a, 2.0 * b);
    }
    for (g, x) in once.iter().zip(w.data()) {
        assert_eq!(*g, 2.0 * x);
    }
}

#[test]
fn backward_visits_each_recorded_op_once() {
    let t = Tape::new();
    let x = t.variable(&Tensor::full(&[4], 0.5));
    let a = t.sigmoid(x);
    let b = t.mul(a, x).unwrap();
    let c = t.add(b, a).unwrap();
    let d = t.sum(c);
    let g = t.backward(d).unwrap();
    assert_eq!(g.ops_visited(), 4);
}

#[test]
fn backward_requires_scalar_output() {
    let t = Tape::new();
    let x = t.variable(&Tensor::zeros(&[2]));
    let y = t.scale(x, 1.0);
    assert!(matches!(t.backward(y), Err(Error::Usage(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let t = Tape::new();
    let x = t.variable(&Tensor::full(&[3], 1.0));
    let c = t.constant(&Tensor::full(&[3], 2.0));
    let frozen = t.leaf(&Tensor::full(&[3], 1.0));
    let y = t.mul(x, c).unwrap();
    let y = t.mul(y, frozen).unwrap();
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0; 3]);
    assert!(g.get(c).is_none());
    assert!(g.get(frozen).is_none());
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3], -1.0, 1.0);
        let t = Tape::new();
        let (xv, wv) = (t.constant(&x), t.constant(&w));
        let y = t.conv2d(xv, wv, None, Conv2dParams::new(2, 1, 1)).unwrap();
        let beta = t.constant(&Tensor::scalar(1.3));
        let y = t.swish(y, beta).unwrap();
        let y = t.upsample_bilinear(y, 2).unwrap();
        let p = t.global_avg_pool(y).unwrap();
        t.value(p).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn ops_preserve_finiteness(data in proptest::collection::vec(-50.0f32..50.0, 16), beta in -5.0f32..5.0) {
        let t = Tape::new();
        let x = t.variable(&Tensor::new(&[1, 1, 4, 4], data).unwrap());
        let b = t.variable(&Tensor::scalar(beta));
        let y = t.swish(x, b).unwrap();
        let y = t.sigmoid(y);
        let y = t.upsample_bilinear(y, 2).unwrap();
        let s = t.mean(y);
        prop_assert!(t.scalar_value(s).is_finite());
        let g = t.backward(s).unwrap();
        prop_assert!(g.get(x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigmoid_stays_in_unit_interval(x in -1e4f32..1e4) {
        let s = sigmoid_f32(x);
        prop_assert!((0.0..=1.0).contains(&s));
    }
}
