//! Differentiable primitives other than convolution.

use std::rc::Rc;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::nchw;

/// `exp(-|x|)` by range reduction to `2^k * e^r` with `|r| <= ln2/2` and a
/// degree-7 Taylor polynomial; relative error stays below `3e-7`.
/// Branch-free so slice loops vectorize.
#[inline]
fn exp_neg_abs(x: f32) -> f32 {
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let a = (-x.abs()).max(-87.0);
    let shifted = a * std::f32::consts::LOG2_E + ROUND;
    let k = shifted - ROUND;
    // Low mantissa bits of `shifted` hold k as a two's-complement integer.
    let ki = shifted.to_bits().wrapping_sub(ROUND.to_bits());
    let r = a - k * LN2_HI - k * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0 + r * (1.0 / 5040.0)))))));
    p * f32::from_bits(ki.wrapping_add(127) << 23)
}

#[inline]
pub(crate) fn sigmoid_f32(x: f32) -> f32 {
    let e = exp_neg_abs(x);
    let s = 1.0 / (1.0 + e);
    if x >= 0.0 {
        s
    } else {
        e * s
    }
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, "shape", format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.iter().zip(vb.iter()).map(|(x, y)| x + y).collect();
        Ok(self
            .record(shape, out, &[a, b], |g, needs| vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.iter().zip(vb.iter()).map(|(x, y)| x * y).collect();
        Ok(self.record(shape, out, &[a, b], move |g, needs| {
            let ga = needs[0].then(|| g.iter().zip(vb.iter()).map(|(g, y)| g * y).collect());
            let gb = needs[1].then(|| g.iter().zip(va.iter()).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        }))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, x: Var, factor: f32) -> Var {
        let v = self.value(x);
        let out = v.iter().map(|x| x * factor).collect();
        self.record(self.shape(x), out, &[x], move |g, _| vec![Some(g.iter().map(|g| g * factor).collect())])
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out: Rc<Vec<f32>> = Rc::new(self.value(x).iter().map(|&v| sigmoid_f32(v)).collect());
        let saved = Rc::clone(&out);
        self.record(self.shape(x), out.as_ref().clone(), &[x], move |g, _| {
            vec![Some(g.iter().zip(saved.iter()).map(|(g, s)| g * s * (1.0 - s)).collect())]
        })
    }

    pub fn relu(&self, x: Var) -> Var {
        let v = self.value(x);
        let out = v.iter().map(|&x| x.max(0.0)).collect();
        self.record(self.shape(x), out, &[x], move |g, _| {
            vec![Some(g.iter().zip(v.iter()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
        })
    }

    /// `x * sigmoid(beta * x)` with a learnable scalar `beta`.
    pub fn swish(&self, x: Var, beta: Var) -> Result<Var> {
        let bshape = self.shape(beta);
        if bshape.iter().product::<usize>() != 1 {
            return Err(Error::dim("swish", "beta", "scalar", format!("{bshape:?}")));
        }
        let b = self.value(beta)[0];
        if !b.is_finite() {
            return Err(Error::Value(format!("swish beta must be finite, got {b}")));
        }
        let v = self.value(x);
        let sig: Vec<f32> = v.iter().map(|&x| sigmoid_f32(b * x)).collect();
        let out = v.iter().zip(&sig).map(|(x, s)| x * s).collect();
        Ok(self.record(self.shape(x), out, &[x, beta], move |g, needs| {
            let gx = needs[0].then(|| {
                g.iter().zip(v.iter().zip(&sig)).map(|(g, (&x, &s))| g * (s + b * x * s * (1.0 - s))).collect()
            });
            let gb = needs[1].then(|| {
                let acc: f64 =
                    g.iter().zip(v.iter().zip(&sig)).map(|(g, (&x, &s))| (g * x * x * s * (1.0 - s)) as f64).sum();
                vec![acc as f32]
            });
            vec![gx, gb]
        }))
    }

    /// Scalar sum, accumulated in `f64`.
    pub fn sum(&self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len();
        let total: f64 = v.iter().map(|&x| x as f64).sum();
        self.record(vec![1], vec![total as f32], &[x], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len();
        let total: f64 = v.iter().map(|&x| x as f64).sum();
        self.record(vec![1], vec![(total / n as f64) as f32], &[x], move |g, _| vec![Some(vec![g[0] / n as f32; n])])
    }

    /// `constant + sum_i weight_i * term_i` over scalar terms.
    pub fn linear_combination(&self, terms: &[(Var, f32)], constant: f32) -> Result<Var> {
        let mut total = constant as f64;
        for (v, w) in terms {
            let shape = self.shape(*v);
            if shape.iter().product::<usize>() != 1 {
                return Err(Error::dim("linear_combination", "term", "scalar", format!("{shape:?}")));
            }
            total += (*w as f64) * self.scalar_value(*v) as f64;
        }
        let weights: Vec<f32> = terms.iter().map(|(_, w)| *w).collect();
        let inputs: Vec<Var> = terms.iter().map(|(v, _)| *v).collect();
        Ok(self.record(vec![1], vec![total as f32], &inputs, move |g, needs| {
            weights.iter().zip(needs).map(|(w, &need)| need.then(|| vec![g[0] * w])).collect()
        }))
    }

    /// Mean over the spatial axes: `N×C×H×W -> N×C×1×1`.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let [n, c, h, w] = nchw("global_avg_pool", &self.shape(x))?;
        let v = self.value(x);
        let hw = h * w;
        let out: Vec<f32> =
            v.chunks_exact(hw).map(|plane| (plane.iter().map(|&x| x as f64).sum::<f64>() / hw as f64) as f32).collect();
        Ok(self.record(vec![n, c, 1, 1], out, &[x], move |g, _| {
            let mut gx = Vec::with_capacity(n * c * hw);
            for &gv in g {
                gx.extend(std::iter::repeat_n(gv / hw as f32, hw));
            }
            vec![Some(gx)]
        }))
    }

    /// Rescales each channel of `x` (N×C×H×W) by `gate` (N×C×1×1).
    pub fn scale_channels(&self, x: Var, gate: Var) -> Result<Var> {
        let [n, c, h, w] = nchw("scale_channels", &self.shape(x))?;
        let gs = self.shape(gate);
        if gs != [n, c, 1, 1] {
            return Err(Error::dim("scale_channels", "gate", format!("[{n}, {c}, 1, 1]"), format!("{gs:?}")));
        }
        let (vx, vg) = (self.value(x), self.value(gate));
        let hw = h * w;
        let mut out = vx.as_ref().clone();
        for (plane, &s) in out.chunks_exact_mut(hw).zip(vg.iter()) {
            plane.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.record(vec![n, c, h, w], out, &[x, gate], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = g.to_vec();
                for (plane, &s) in gx.chunks_exact_mut(hw).zip(vg.iter()) {
                    plane.iter_mut().for_each(|v| *v *= s);
                }
                gx
            });
            let gg = needs[1].then(|| {
                g.chunks_exact(hw)
                    .zip(vx.chunks_exact(hw))
                    .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| (a * b) as f64).sum::<f64>() as f32)
                    .collect()
            });
            vec![gx, gg]
        }))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = nchw("concat", &self.shape(a))?;
        let [nb, cb, hb, wb] = nchw("concat", &self.shape(b))?;
        for (axis, x, y) in [("N", na, nb), ("H", ha, hb), ("W", wa, wb)] {
            if x != y {
                return Err(Error::dim("concat", axis, x, y));
            }
        }
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (ca * ha * wa, cb * hb * wb);
        let mut out = Vec::with_capacity(na * (sa + sb));
        for i in 0..na {
            out.extend_from_slice(&va[i * sa..(i + 1) * sa]);
            out.extend_from_slice(&vb[i * sb..(i + 1) * sb]);
        }
        Ok(self.record(vec![na, ca + cb, ha, wa], out, &[a, b], move |g, needs| {
            let step = sa + sb;
            let ga = needs[0].then(|| (0..na).flat_map(|i| g[i * step..i * step + sa].to_vec()).collect());
            let gb = needs[1].then(|| (0..na).flat_map(|i| g[i * step + sa..(i + 1) * step].to_vec()).collect());
            vec![ga, gb]
        }))
    }

    /// Bilinear upsampling by an integer factor with half-pixel centres
    /// (the `align_corners = false` convention).
    pub fn upsample_bilinear(&self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Usage("upsample factor must be >= 1".into()));
        }
        let [n, c, h, w] = nchw("upsample_bilinear", &self.shape(x))?;
        let (oh, ow) = (h * factor, w * factor);
        let rows = Rc::new(axis_taps(h, factor));
        let cols = Rc::new(axis_taps(w, factor));
        let v = self.value(x);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for (src, dst) in v.chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
            for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    dst[oy * ow + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        Ok(self.record(vec![n, c, oh, ow], out, &[x], move |g, _| {
            let mut gx = vec![0.0f32; n * c * h * w];
            for (gsrc, gdst) in g.chunks_exact(oh * ow).zip(gx.chunks_exact_mut(h * w)) {
                for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
                        let gv = gsrc[oy * ow + ox];
                        gdst[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                        gdst[y0 * w + x1] += gv * (1.0 - ly) * lx;
                        gdst[y1 * w + x0] += gv * ly * (1.0 - lx);
                        gdst[y1 * w + x1] += gv * ly * lx;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}

/// Source taps `(i0, i1, frac)` for each output index along one axis.
fn axis_taps(len: usize, factor: usize) -> Vec<(usize, usize, f32)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f32 + 0.5) / factor as f32 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}
