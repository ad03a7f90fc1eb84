//! 2-D convolution (NCHW, grouped) via im2col + sgemm, with a direct
//! path for depthwise kernels.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::nchw;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self { stride: 1, padding: 0, groups: 1 }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self { stride, padding, groups }
    }
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn opix(&self) -> usize {
        self.oh * self.ow
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }
}

fn geometry(xs: &[usize], ws: &[usize], p: Conv2dParams) -> Result<Geometry> {
    let [n, cin, h, w] = nchw("conv2d", xs)?;
    let [cout, cin_g, kh, kw] = match ws {
        &[a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::dim("conv2d", "weight rank", 4, ws.len())),
    };
    if p.stride == 0 {
        return Err(Error::Usage("conv2d stride must be >= 1".into()));
    }
    if p.groups == 0 || cin % p.groups != 0 {
        return Err(Error::dim("conv2d", "C_in", format!("multiple of groups={}", p.groups), cin));
    }
    if cout % p.groups != 0 {
        return Err(Error::dim("conv2d", "C_out", format!("multiple of groups={}", p.groups), cout));
    }
    if cin_g != cin / p.groups {
        return Err(Error::dim("conv2d", "weight C_in/groups", cin / p.groups, cin_g));
    }
    if h + 2 * p.padding < kh {
        return Err(Error::dim("conv2d", "H", format!(">= {}", kh.saturating_sub(2 * p.padding)), h));
    }
    if w + 2 * p.padding < kw {
        return Err(Error::dim("conv2d", "W", format!(">= {}", kw.saturating_sub(2 * p.padding)), w));
    }
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh: (h + 2 * p.padding - kh) / p.stride + 1,
        ow: (w + 2 * p.padding - kw) / p.stride + 1,
        stride: p.stride,
        pad: p.padding,
        groups: p.groups,
    })
}

/// Row-major `C[m×n] = alpha·A·B + beta·C` with arbitrary strides on A, B.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index sgemm touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one group of one image into `[K, OH*OW]` columns.
fn im2col(g: &Geometry, x: &[f32], cols: &mut [f32]) {
    let opix = g.opix();
    for c in 0..g.cin_g() {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = valid_range(ky, g, g.oh, g.h);
            for kx in 0..g.kw {
                let (ox0, ox1) = valid_range(kx, g, g.ow, g.w);
                let row = &mut cols[((c * g.kh + ky) * g.kw + kx) * opix..][..opix];
                row[..oy0 * g.ow].fill(0.0);
                row[oy1 * g.ow..].fill(0.0);
                for oy in oy0..oy1 {
                    let src = &plane[(oy * g.stride + ky - g.pad) * g.w..][..g.w];
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    dst[..ox0].fill(0.0);
                    dst[ox1..].fill(0.0);
                    let first = ox0 * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        dst[ox0..ox1].copy_from_slice(&src[first..first + (ox1 - ox0)]);
                    } else {
                        for (d, s) in dst[ox0..ox1].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Folds columns back, adding into `dx`.
fn col2im(g: &Geometry, cols: &[f32], dx: &mut [f32]) {
    let opix = g.opix();
    for c in 0..g.cin_g() {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = valid_range(ky, g, g.oh, g.h);
            for kx in 0..g.kw {
                let (ox0, ox1) = valid_range(kx, g, g.ow, g.w);
                let row = &cols[((c * g.kh + ky) * g.kw + kx) * opix..][..opix];
                for oy in oy0..oy1 {
                    let dst = &mut plane[(oy * g.stride + ky - g.pad) * g.w..][..g.w];
                    let src = &row[oy * g.ow + ox0..oy * g.ow + ox1];
                    let first = ox0 * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, s) in dst[first..first + src.len()].iter_mut().zip(src) {
                            *d += s;
                        }
                    } else {
                        for (d, s) in dst[first..].iter_mut().step_by(g.stride).zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Output-column range whose input column `ox*stride + kx - pad` is in bounds.
fn valid_range(kx: usize, g: &Geometry, out_len: usize, in_len: usize) -> (usize, usize) {
    let lo = if g.pad > kx { (g.pad - kx).div_ceil(g.stride) } else { 0 };
    let hi = if in_len + g.pad > kx { ((in_len + g.pad - kx - 1) / g.stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

fn depthwise_forward(g: &Geometry, x: &[f32], w: &[f32], out: &mut [f32]) {
    let (hw, opix, kk) = (g.h * g.w, g.opix(), g.kh * g.kw);
    for ni in 0..g.n {
        for c in 0..g.cin {
            let src = &x[(ni * g.cin + c) * hw..][..hw];
            let dst = &mut out[(ni * g.cout + c) * opix..][..opix];
            let wk = &w[c * kk..(c + 1) * kk];
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(ky, g, g.oh, g.h);
                for kx in 0..g.kw {
                    let wv = wk[ky * g.kw + kx];
                    let (ox0, ox1) = valid_range(kx, g, g.ow, g.w);
                    let first = ox0 * g.stride + kx - g.pad;
                    for oy in oy0..oy1 {
                        let srow = &src[(oy * g.stride + ky - g.pad) * g.w..][..g.w];
                        let drow = &mut dst[oy * g.ow + ox0..oy * g.ow + ox1];
                        if g.stride == 1 {
                            for (d, s) in drow.iter_mut().zip(&srow[first..]) {
                                *d += wv * s;
                            }
                        } else {
                            for (d, s) in drow.iter_mut().zip(srow[first..].iter().step_by(g.stride)) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward(
    g: &Geometry,
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    mut dx: Option<&mut [f32]>,
    mut dw: Option<&mut [f32]>,
) {
    let (hw, opix, kk) = (g.h * g.w, g.opix(), g.kh * g.kw);
    for ni in 0..g.n {
        for c in 0..g.cin {
            let src = &x[(ni * g.cin + c) * hw..][..hw];
            let gsrc = &gout[(ni * g.cout + c) * opix..][..opix];
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(ky, g, g.oh, g.h);
                for kx in 0..g.kw {
                    let (ox0, ox1) = valid_range(kx, g, g.ow, g.w);
                    let first = ox0 * g.stride + kx - g.pad;
                    let wv = w[c * kk + ky * g.kw + kx];
                    // Eight partial sums keep the reduction vectorizable.
                    let mut acc = [0.0f32; 8];
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gsrc[oy * g.ow + ox0..oy * g.ow + ox1];
                        if let Some(dx) = dx.as_deref_mut() {
                            let drow = &mut dx[(ni * g.cin + c) * hw + iy * g.w..][..g.w];
                            if g.stride == 1 {
                                for (d, gv) in drow[first..].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            } else {
                                for (d, gv) in drow[first..].iter_mut().step_by(g.stride).zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        let srow = &src[iy * g.w..][..g.w];
                        if g.stride == 1 {
                            let s = &srow[first..first + grow.len()];
                            let (gc, sc) = (grow.chunks_exact(8), s.chunks_exact(8));
                            let (gr, sr) = (gc.remainder(), sc.remainder());
                            for (ga, sa) in gc.zip(sc) {
                                for l in 0..8 {
                                    acc[l] += ga[l] * sa[l];
                                }
                            }
                            for (l, (a, b)) in gr.iter().zip(sr).enumerate() {
                                acc[l] += a * b;
                            }
                        } else {
                            for (gv, sv) in grow.iter().zip(srow[first..].iter().step_by(g.stride)) {
                                acc[0] += gv * sv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[c * kk + ky * g.kw + kx] += acc.iter().map(|&v| v as f64).sum::<f64>() as f32;
                    }
                }
            }
        }
    }
}

impl Tape {
    /// Grouped 2-D convolution. `weight` is `[C_out, C_in/groups, kh, kw]`,
    /// `bias` is `[C_out]`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, p: Conv2dParams) -> Result<Var> {
        let g = geometry(&self.shape(x), &self.shape(weight), p)?;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [g.cout] {
                return Err(Error::dim("conv2d", "bias", format!("[{}]", g.cout), format!("{bs:?}")));
            }
        }
        let xv = self.value(x);
        let wv = self.value(weight);
        let (opix, k, cin_g, cout_g) = (g.opix(), g.k(), g.cin_g(), g.cout_g());
        let in_stride = g.cin * g.h * g.w;
        let out_stride = g.cout * opix;
        let mut out = vec![0.0f32; g.n * out_stride];

        if g.is_depthwise() {
            depthwise_forward(&g, &xv, &wv, &mut out);
        } else {
            let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; k * opix] };
            for ni in 0..g.n {
                for gi in 0..g.groups {
                    let xg = &xv[ni * in_stride + gi * cin_g * g.h * g.w..][..cin_g * g.h * g.w];
                    let b: &[f32] = if g.is_pointwise() {
                        xg
                    } else {
                        im2col(&g, xg, &mut cols);
                        &cols
                    };
                    let wg = &wv[gi * cout_g * k..(gi + 1) * cout_g * k];
                    let c = &mut out[ni * out_stride + gi * cout_g * opix..][..cout_g * opix];
                    gemm(cout_g, k, opix, wg, (k, 1), b, (opix, 1), 0.0, c);
                }
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b);
            for (i, plane) in out.chunks_exact_mut(opix).enumerate() {
                let bias = bv[i % g.cout];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }

        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.record(vec![g.n, g.cout, g.oh, g.ow], out, &inputs, move |gout, needs| {
            let mut dx = needs[0].then(|| vec![0.0f32; xv.len()]);
            let mut dw = needs[1].then(|| vec![0.0f32; wv.len()]);
            if g.is_depthwise() {
                depthwise_backward(&g, &xv, &wv, gout, dx.as_deref_mut(), dw.as_deref_mut());
            } else {
                let mut cols = vec![0.0f32; k * opix];
                for ni in 0..g.n {
                    for gi in 0..g.groups {
                        let xoff = ni * in_stride + gi * cin_g * g.h * g.w;
                        let gg = &gout[ni * out_stride + gi * cout_g * opix..][..cout_g * opix];
                        let wg = &wv[gi * cout_g * k..(gi + 1) * cout_g * k];
                        if let Some(dw) = dw.as_deref_mut() {
                            let xg = &xv[xoff..][..cin_g * g.h * g.w];
                            let b: &[f32] = if g.is_pointwise() {
                                xg
                            } else {
                                im2col(&g, xg, &mut cols);
                                &cols
                            };
                            // dW[o, k] += sum_p gout[o, p] * cols[k, p]
                            let dwg = &mut dw[gi * cout_g * k..(gi + 1) * cout_g * k];
                            gemm(cout_g, opix, k, gg, (opix, 1), b, (1, opix), 1.0, dwg);
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let dxg = &mut dx[xoff..][..cin_g * g.h * g.w];
                            // dcols[k, p] = sum_o W[o, k] * gout[o, p]
                            if g.is_pointwise() {
                                gemm(k, cout_g, opix, wg, (1, k), gg, (opix, 1), 1.0, dxg);
                            } else {
                                gemm(k, cout_g, opix, wg, (1, k), gg, (opix, 1), 0.0, &mut cols);
                                col2im(&g, &cols, dxg);
                            }
                        }
                    }
                }
            }
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut db = vec![0.0f32; g.cout];
                    for (i, plane) in gout.chunks_exact(opix).enumerate() {
                        db[i % g.cout] += plane.iter().map(|&v| v as f64).sum::<f64>() as f32;
                    }
                    db
                }));
            }
            grads
        }))
    }
}
