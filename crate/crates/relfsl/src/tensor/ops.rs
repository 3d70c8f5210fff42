//! Pure tensor kernels: forward math and the matching backward rules.
//!
//! Everything here is a function of its inputs — no recording, no state.
//! The tape wraps these for autodiff; the oracle tests compare them against
//! the naive nested-loop implementations in [`crate::reference`].

use super::{axis_split, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

// ── elementwise ──────────────────────────────────────────────────────

pub fn add<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    zip_same_shape("add", a, b, |x, y| x + y)
}

pub fn sub<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    zip_same_shape("sub", a, b, |x, y| x - y)
}

/// Elementwise (Hadamard) product.
pub fn mul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    zip_same_shape("mul", a, b, |x, y| x * y)
}

fn zip_same_shape<E: Scalar>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: impl Fn(E, E) -> E,
) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add_scalar<E: Scalar>(a: &Tensor<E>, c: E) -> Tensor<E> {
    a.map(|v| v + c)
}

pub fn mul_scalar<E: Scalar>(a: &Tensor<E>, c: E) -> Tensor<E> {
    a.map(|v| v * c)
}

pub fn relu<E: Scalar>(a: &Tensor<E>) -> Tensor<E> {
    a.map(|v| if v > E::zero() { v } else { E::zero() })
}

/// ReLU subgradient with the value-0 convention: gradient 0 at x <= 0.
pub fn relu_backward<E: Scalar>(x: &Tensor<E>, dy: &[E]) -> Vec<E> {
    x.data()
        .iter()
        .zip(dy)
        .map(|(&v, &g)| if v > E::zero() { g } else { E::zero() })
        .collect()
}

// ── matrix products ──────────────────────────────────────────────────

/// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
pub fn matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (m, k) = expect_2d("matmul", a)?;
    let (k2, n) = expect_2d("matmul", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![E::zero(); m * n];
    matmul_raw(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// Batched matmul `[p,m,k] x [p,k,n] -> [p,m,n]`.
pub fn bmm<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]
    {
        return Err(Error::shape(
            "bmm",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (p, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = b.shape()[2];
    let mut out = vec![E::zero(); p * m * n];
    for i in 0..p {
        matmul_raw(
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            &mut out[i * m * n..(i + 1) * m * n],
            m,
            k,
            n,
        );
    }
    Tensor::new(vec![p, m, n], out)
}

fn expect_2d<E: Scalar>(op: &'static str, t: &Tensor<E>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(op, format!("expected rank 2, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `out += a @ b` with `a: [m,k]`, `b: [k,n]`, in fixed k-ascending order per
/// output element so results are bit-reproducible.
pub(crate) fn matmul_raw<E: Scalar>(a: &[E], b: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a @ b^T` with `a: [m,k]`, `b: [n,k]`.
pub(crate) fn matmul_nt_raw<E: Scalar>(a: &[E], b: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// `out += a^T @ b` with `a: [k,m]`, `b: [k,n]`.
pub(crate) fn matmul_tn_raw<E: Scalar>(a: &[E], b: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

// ── convolution ──────────────────────────────────────────────────────

pub fn conv2d_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Cross-correlation convolution over `[B,Cin,H,W]` with `[Cout,Cin,kh,kw]`
/// weights plus a per-channel bias, via im2col and a matrix product.
pub fn conv2d<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let geom = ConvGeom::resolve(x, w, bias, stride, padding)?;
    let ConvGeom {
        batch,
        c_in,
        h,
        w: iw,
        c_out,
        kh,
        kw,
        ho,
        wo,
    } = geom;
    let k2 = c_in * kh * kw;
    let plane = ho * wo;
    let mut col = vec![E::zero(); k2 * plane];
    let mut out = vec![E::zero(); batch * c_out * plane];
    for b in 0..batch {
        im2col(
            &x.data()[b * c_in * h * iw..(b + 1) * c_in * h * iw],
            &mut col,
            c_in,
            h,
            iw,
            kh,
            kw,
            stride,
            padding,
            ho,
            wo,
        );
        let y = &mut out[b * c_out * plane..(b + 1) * c_out * plane];
        for co in 0..c_out {
            let bv = bias.data()[co];
            for v in &mut y[co * plane..(co + 1) * plane] {
                *v = bv;
            }
        }
        matmul_raw(w.data(), &col, y, c_out, k2, plane);
    }
    Tensor::new(vec![batch, c_out, ho, wo], out)
}

/// Gradients of [`conv2d`] with respect to input, weight, and bias.
pub fn conv2d_backward<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    dy: &[E],
    stride: usize,
    padding: usize,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let geom = ConvGeom::resolve_unchecked(x, w, stride, padding);
    let ConvGeom {
        batch,
        c_in,
        h,
        w: iw,
        c_out,
        kh,
        kw,
        ho,
        wo,
    } = geom;
    let k2 = c_in * kh * kw;
    let plane = ho * wo;
    let mut col = vec![E::zero(); k2 * plane];
    let mut dcol = vec![E::zero(); k2 * plane];
    let mut dx = vec![E::zero(); x.numel()];
    let mut dw = vec![E::zero(); w.numel()];
    let mut db = vec![E::zero(); c_out];
    for b in 0..batch {
        let dy_b = &dy[b * c_out * plane..(b + 1) * c_out * plane];
        im2col(
            &x.data()[b * c_in * h * iw..(b + 1) * c_in * h * iw],
            &mut col,
            c_in,
            h,
            iw,
            kh,
            kw,
            stride,
            padding,
            ho,
            wo,
        );
        // dW += dY_b @ col^T, db += row sums of dY_b
        matmul_nt_raw(dy_b, &col, &mut dw, c_out, plane, k2);
        for co in 0..c_out {
            let mut acc = E::zero();
            for &g in &dy_b[co * plane..(co + 1) * plane] {
                acc = acc + g;
            }
            db[co] = db[co] + acc;
        }
        // dcol = W^T @ dY_b, scattered back to the input plane
        for v in dcol.iter_mut() {
            *v = E::zero();
        }
        matmul_tn_raw(w.data(), dy_b, &mut dcol, k2, c_out, plane);
        col2im_add(
            &dcol,
            &mut dx[b * c_in * h * iw..(b + 1) * c_in * h * iw],
            c_in,
            h,
            iw,
            kh,
            kw,
            stride,
            padding,
            ho,
            wo,
        );
    }
    (dx, dw, db)
}

struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn resolve<E: Scalar>(
        x: &Tensor<E>,
        w: &Tensor<E>,
        bias: &Tensor<E>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if x.rank() != 4 || w.rank() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} and weight {:?} must be rank 4", x.shape(), w.shape()),
            ));
        }
        if x.shape()[1] != w.shape()[1] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channels {:?} do not match weight channels {:?}",
                    x.shape(),
                    w.shape()
                ),
            ));
        }
        if bias.shape() != [w.shape()[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} must be [{}]", bias.shape(), w.shape()[0]),
            ));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be >= 1".into()));
        }
        let (kh, kw) = (w.shape()[2], w.shape()[3]);
        let ho = conv2d_out_dim(x.shape()[2], kh, stride, padding);
        let wo = conv2d_out_dim(x.shape()[3], kw, stride, padding);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok(ConvGeom {
                batch: x.shape()[0],
                c_in: x.shape()[1],
                h: x.shape()[2],
                w: x.shape()[3],
                c_out: w.shape()[0],
                kh,
                kw,
                ho,
                wo,
            }),
            _ => Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {:?} does not fit input {:?} with stride {stride}, padding {padding}",
                    w.shape(),
                    x.shape()
                ),
            )),
        }
    }

    fn resolve_unchecked<E: Scalar>(x: &Tensor<E>, w: &Tensor<E>, stride: usize, padding: usize) -> Self {
        let (kh, kw) = (w.shape()[2], w.shape()[3]);
        ConvGeom {
            batch: x.shape()[0],
            c_in: x.shape()[1],
            h: x.shape()[2],
            w: x.shape()[3],
            c_out: w.shape()[0],
            kh,
            kw,
            ho: conv2d_out_dim(x.shape()[2], kh, stride, padding).unwrap(),
            wo: conv2d_out_dim(x.shape()[3], kw, stride, padding).unwrap(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<E: Scalar>(
    img: &[E],
    col: &mut [E],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) {
    let plane = ho * wo;
    for ci in 0..c_in {
        let chan = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[((ci * kh + ky) * kw + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        for v in dst.iter_mut() {
                            *v = E::zero();
                        }
                        continue;
                    }
                    let src_row = &chan[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            E::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Scalar>(
    col: &[E],
    img: &mut [E],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) {
    let plane = ho * wo;
    for ci in 0..c_in {
        let chan = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &col[((ci * kh + ky) * kw + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

// ── pooling ──────────────────────────────────────────────────────────

/// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
pub fn maxpool2x2<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    if x.rank() != 4 {
        return Err(Error::shape("maxpool2x2", format!("{:?}", x.shape())));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(Error::shape(
            "maxpool2x2",
            format!("spatial {h}x{w} too small"),
        ));
    }
    let mut out = vec![E::zero(); b * c * ho * wo];
    for bc in 0..b * c {
        let chan = &x.data()[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let (iy, ix) = (oy * 2, ox * 2);
                let mut m = chan[iy * w + ix];
                for &v in [
                    chan[iy * w + ix + 1],
                    chan[(iy + 1) * w + ix],
                    chan[(iy + 1) * w + ix + 1],
                ]
                .iter()
                {
                    if v > m {
                        m = v;
                    }
                }
                dst[oy * wo + ox] = m;
            }
        }
    }
    Tensor::new(vec![b, c, ho, wo], out)
}

/// Routes gradient to the first maximum (scan order) in each 2x2 window.
pub fn maxpool2x2_backward<E: Scalar>(x: &Tensor<E>, dy: &[E]) -> Vec<E> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut dx = vec![E::zero(); x.numel()];
    for bc in 0..b * c {
        let chan = &x.data()[bc * h * w..(bc + 1) * h * w];
        let dchan = &mut dx[bc * h * w..(bc + 1) * h * w];
        let g = &dy[bc * ho * wo..(bc + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let (iy, ix) = (oy * 2, ox * 2);
                let offs = [
                    iy * w + ix,
                    iy * w + ix + 1,
                    (iy + 1) * w + ix,
                    (iy + 1) * w + ix + 1,
                ];
                let mut best = offs[0];
                for &o in &offs[1..] {
                    if chan[o] > chan[best] {
                        best = o;
                    }
                }
                dchan[best] = dchan[best] + g[oy * wo + ox];
            }
        }
    }
    dx
}

// ── batch normalization ──────────────────────────────────────────────

/// Per-channel statistics saved by the training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnStats<E> {
    pub mean: Vec<E>,
    /// Biased variance over (B,H,W).
    pub var: Vec<E>,
    pub inv_std: Vec<E>,
}

/// Training-mode batchnorm over `[B,C,H,W]`: per-channel statistics across
/// batch and spatial dimensions, biased variance, then affine gamma/beta.
pub fn batchnorm2d_train<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, BnStats<E>)> {
    let (b, c, h, w) = bn_dims(x, gamma, beta)?;
    let hw = h * w;
    let n = (b * hw) as f64;
    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    let mut inv_std = vec![E::zero(); c];
    for ci in 0..c {
        let mut s = 0.0f64;
        let mut s2 = 0.0f64;
        for bi in 0..b {
            for &v in &x.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                let v = v.as_f64();
                s += v;
                s2 += v * v;
            }
        }
        let m = s / n;
        let va = (s2 / n - m * m).max(0.0);
        mean[ci] = E::from_f64(m);
        var[ci] = E::from_f64(va);
        inv_std[ci] = E::from_f64(1.0 / (va + eps).sqrt());
    }
    let mut out = vec![E::zero(); x.numel()];
    for bi in 0..b {
        for ci in 0..c {
            let g = gamma.data()[ci] * inv_std[ci];
            let bta = beta.data()[ci];
            let m = mean[ci];
            let src = &x.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            let dst = &mut out[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = (v - m) * g + bta;
            }
        }
    }
    let y = Tensor::new(x.shape().to_vec(), out)?;
    Ok((y, BnStats { mean, var, inv_std }))
}

/// Inference-mode batchnorm using running statistics.
pub fn batchnorm2d_eval<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    eps: f64,
) -> Result<Tensor<E>> {
    let (b, c, h, w) = bn_dims(x, gamma, beta)?;
    let hw = h * w;
    let mut out = vec![E::zero(); x.numel()];
    for ci in 0..c {
        let inv = E::from_f64(1.0 / (running_var.data()[ci].as_f64() + eps).sqrt());
        let g = gamma.data()[ci] * inv;
        let m = running_mean.data()[ci];
        let bta = beta.data()[ci];
        for bi in 0..b {
            let src = &x.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            let dst = &mut out[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = (v - m) * g + bta;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Backward for training-mode batchnorm. Returns (dx, dgamma, dbeta).
pub fn batchnorm2d_train_backward<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    stats: &BnStats<E>,
    dy: &[E],
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let hw = x.shape()[2] * x.shape()[3];
    let n = (b * hw) as f64;
    let mut dx = vec![E::zero(); x.numel()];
    let mut dgamma = vec![E::zero(); c];
    let mut dbeta = vec![E::zero(); c];
    for ci in 0..c {
        let m = stats.mean[ci].as_f64();
        let inv = stats.inv_std[ci].as_f64();
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for i in 0..hw {
                let g = dy[base + i].as_f64();
                let xhat = (x.data()[base + i].as_f64() - m) * inv;
                sum_dy += g;
                sum_dy_xhat += g * xhat;
            }
        }
        dgamma[ci] = E::from_f64(sum_dy_xhat);
        dbeta[ci] = E::from_f64(sum_dy);
        let gam = gamma.data()[ci].as_f64();
        let scale = gam * inv / n;
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for i in 0..hw {
                let g = dy[base + i].as_f64();
                let xhat = (x.data()[base + i].as_f64() - m) * inv;
                dx[base + i] = E::from_f64(scale * (n * g - sum_dy - xhat * sum_dy_xhat));
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward for inference-mode batchnorm (a per-channel affine map).
pub fn batchnorm2d_eval_backward<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    eps: f64,
    dy: &[E],
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let hw = x.shape()[2] * x.shape()[3];
    let mut dx = vec![E::zero(); x.numel()];
    let mut dgamma = vec![E::zero(); c];
    let mut dbeta = vec![E::zero(); c];
    for ci in 0..c {
        let inv = E::from_f64(1.0 / (running_var.data()[ci].as_f64() + eps).sqrt());
        let m = running_mean.data()[ci];
        let g = gamma.data()[ci] * inv;
        let mut dg = E::zero();
        let mut db = E::zero();
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for i in 0..hw {
                let grad = dy[base + i];
                dx[base + i] = grad * g;
                dg = dg + grad * (x.data()[base + i] - m) * inv;
                db = db + grad;
            }
        }
        dgamma[ci] = dg;
        dbeta[ci] = db;
    }
    (dx, dgamma, dbeta)
}

fn bn_dims<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::shape("batchnorm2d", format!("{:?}", x.shape())));
    }
    let c = x.shape()[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batchnorm2d",
            format!(
                "gamma {:?} / beta {:?} must be [{c}] for input {:?}",
                gamma.shape(),
                beta.shape(),
                x.shape()
            ),
        ));
    }
    Ok((x.shape()[0], c, x.shape()[2], x.shape()[3]))
}

// ── softmax family ───────────────────────────────────────────────────

/// Shift-invariant softmax along `axis`.
pub fn softmax<E: Scalar>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    check_axis("softmax", x, axis)?;
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut out = vec![E::zero(); x.numel()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let mut mx = x.data()[idx(0)];
            for i in 1..len {
                let v = x.data()[idx(i)];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = 0.0f64;
            for i in 0..len {
                let e = (x.data()[idx(i)] - mx).as_f64().exp();
                out[idx(i)] = E::from_f64(e);
                denom += e;
            }
            let inv = E::from_f64(1.0 / denom);
            for i in 0..len {
                out[idx(i)] = out[idx(i)] * inv;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_backward<E: Scalar>(y: &Tensor<E>, dy: &[E], axis: usize) -> Vec<E> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let mut dx = vec![E::zero(); y.numel()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let mut dot = E::zero();
            for i in 0..len {
                dot = dot + dy[idx(i)] * y.data()[idx(i)];
            }
            for i in 0..len {
                dx[idx(i)] = y.data()[idx(i)] * (dy[idx(i)] - dot);
            }
        }
    }
    dx
}

/// Numerically stable log-softmax along `axis`.
pub fn log_softmax<E: Scalar>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    check_axis("log_softmax", x, axis)?;
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut out = vec![E::zero(); x.numel()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let mut mx = x.data()[idx(0)];
            for i in 1..len {
                let v = x.data()[idx(i)];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = 0.0f64;
            for i in 0..len {
                denom += (x.data()[idx(i)] - mx).as_f64().exp();
            }
            let log_denom = E::from_f64(denom.ln());
            for i in 0..len {
                out[idx(i)] = x.data()[idx(i)] - mx - log_denom;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn log_softmax_backward<E: Scalar>(y: &Tensor<E>, dy: &[E], axis: usize) -> Vec<E> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let mut dx = vec![E::zero(); y.numel()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let mut sum = E::zero();
            for i in 0..len {
                sum = sum + dy[idx(i)];
            }
            for i in 0..len {
                dx[idx(i)] = dy[idx(i)] - y.data()[idx(i)].exp() * sum;
            }
        }
    }
    dx
}

// ── reductions ───────────────────────────────────────────────────────

/// Sum along `axis`, removing it (a rank-1 input reduces to shape `[1]`).
pub fn sum_axis<E: Scalar>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    check_axis("sum_axis", x, axis)?;
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut out = vec![E::zero(); outer * inner];
    for o in 0..outer {
        for i in 0..len {
            let src = &x.data()[(o * len + i) * inner..(o * len + i + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = *d + v;
            }
        }
    }
    Tensor::new(reduced_shape(x.shape(), axis), out)
}

pub fn mean_axis<E: Scalar>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    let len = x.shape()[axis];
    let s = sum_axis(x, axis)?;
    Ok(mul_scalar(&s, E::from_f64(1.0 / len as f64)))
}

pub fn sum_all<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let mut acc = E::zero();
    for &v in x.data() {
        acc = acc + v;
    }
    Tensor::scalar(acc)
}

pub fn mean_all<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let s = sum_all(x);
    mul_scalar(&s, E::from_f64(1.0 / x.numel() as f64))
}

/// Spread `dy` (shaped as the reduction output) back across the removed axis.
pub fn broadcast_axis_backward<E: Scalar>(
    in_shape: &[usize],
    axis: usize,
    dy: &[E],
    scale: E,
) -> Vec<E> {
    let (outer, len, inner) = axis_split(in_shape, axis);
    let mut dx = vec![E::zero(); outer * len * inner];
    for o in 0..outer {
        let src = &dy[o * inner..(o + 1) * inner];
        for i in 0..len {
            let dst = &mut dx[(o * len + i) * inner..(o * len + i + 1) * inner];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v * scale;
            }
        }
    }
    dx
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

// ── normalization ────────────────────────────────────────────────────

/// L2-normalize fibers along `axis`: `y = x / sqrt(sum(x^2) + eps)`.
/// Returns the per-fiber denominators for the backward pass.
pub fn l2_normalize<E: Scalar>(x: &Tensor<E>, axis: usize, eps: f64) -> Result<(Tensor<E>, Vec<E>)> {
    check_axis("l2_normalize", x, axis)?;
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut out = vec![E::zero(); x.numel()];
    let mut denoms = vec![E::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let mut ss = 0.0f64;
            for i in 0..len {
                let v = x.data()[idx(i)].as_f64();
                ss += v * v;
            }
            let denom = (ss + eps).sqrt();
            let inv = E::from_f64(1.0 / denom);
            denoms[o * inner + j] = E::from_f64(denom);
            for i in 0..len {
                out[idx(i)] = x.data()[idx(i)] * inv;
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, denoms))
}

pub fn l2_normalize_backward<E: Scalar>(
    x: &Tensor<E>,
    denoms: &[E],
    dy: &[E],
    axis: usize,
) -> Vec<E> {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut dx = vec![E::zero(); x.numel()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let d = denoms[o * inner + j].as_f64();
            let mut dot = 0.0f64;
            for i in 0..len {
                dot += dy[idx(i)].as_f64() * x.data()[idx(i)].as_f64();
            }
            let d3 = d * d * d;
            for i in 0..len {
                let g = dy[idx(i)].as_f64() / d - x.data()[idx(i)].as_f64() * dot / d3;
                dx[idx(i)] = E::from_f64(g);
            }
        }
    }
    dx
}

// ── shape movement ───────────────────────────────────────────────────

/// Concatenate along `axis`. All other dimensions must agree.
pub fn concat<E: Scalar>(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    check_axis("concat", first, axis)?;
    let mut total_len = 0;
    for p in parts {
        if p.rank() != first.rank()
            || p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .any(|(a, (&x, &y))| a != axis && x != y)
        {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?} along axis {axis}", p.shape(), first.shape()),
            ));
        }
        total_len += p.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = total_len;
    let (outer, _, inner) = axis_split(&out_shape, axis);
    let mut out = vec![E::zero(); outer * total_len * inner];
    for o in 0..outer {
        let mut written = 0;
        for p in parts {
            let len = p.shape()[axis];
            let src = &p.data()[o * len * inner..(o + 1) * len * inner];
            let dst = &mut out[(o * total_len + written) * inner..][..len * inner];
            dst.copy_from_slice(src);
            written += len;
        }
    }
    Tensor::new(out_shape, out)
}

/// Row gather along axis 0; indices may repeat.
pub fn gather_rows<E: Scalar>(x: &Tensor<E>, indices: &[usize]) -> Result<Tensor<E>> {
    let rows = x.shape()[0];
    let row_size = x.numel() / rows;
    if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
        return Err(Error::Contract(format!(
            "gather index {bad} out of range for {rows} rows"
        )));
    }
    let mut out = vec![E::zero(); indices.len() * row_size];
    for (r, &i) in indices.iter().enumerate() {
        out[r * row_size..(r + 1) * row_size]
            .copy_from_slice(&x.data()[i * row_size..(i + 1) * row_size]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, out)
}

pub fn gather_rows_backward<E: Scalar>(
    in_shape: &[usize],
    indices: &[usize],
    dy: &[E],
) -> Vec<E> {
    let rows = in_shape[0];
    let row_size: usize = in_shape[1..].iter().product();
    let mut dx = vec![E::zero(); rows * row_size];
    for (r, &i) in indices.iter().enumerate() {
        let src = &dy[r * row_size..(r + 1) * row_size];
        let dst = &mut dx[i * row_size..(i + 1) * row_size];
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = *d + v;
        }
    }
    dx
}

/// `y[r] = x[r, cols[r]]` for a rank-2 input.
pub fn pick_per_row<E: Scalar>(x: &Tensor<E>, cols: &[usize]) -> Result<Tensor<E>> {
    let (rows, width) = expect_2d("pick_per_row", x)?;
    if cols.len() != rows {
        return Err(Error::Contract(format!(
            "pick_per_row: {} indices for {rows} rows",
            cols.len()
        )));
    }
    if let Some(&bad) = cols.iter().find(|&&c| c >= width) {
        return Err(Error::Contract(format!(
            "pick_per_row index {bad} out of range for width {width}"
        )));
    }
    let data = cols
        .iter()
        .enumerate()
        .map(|(r, &c)| x.data()[r * width + c])
        .collect();
    Tensor::new(vec![rows], data)
}

/// Reorder axes: `out.shape[i] = x.shape[axes[i]]`.
pub fn permute<E: Scalar>(x: &Tensor<E>, axes: &[usize]) -> Result<Tensor<E>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
    {
        return Err(Error::Contract(format!(
            "permute axes {axes:?} invalid for rank {rank}"
        )));
    }
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    // Output stride contributed by each input axis.
    let mut out_strides = vec![0usize; rank];
    {
        let mut s = 1;
        for j in (0..rank).rev() {
            out_strides[axes[j]] = s;
            s *= out_shape[j];
        }
    }
    let mut out = vec![E::zero(); x.numel()];
    let mut coords = vec![0usize; rank];
    let mut off = 0usize;
    for &v in x.data() {
        out[off] = v;
        for a in (0..rank).rev() {
            coords[a] += 1;
            off += out_strides[a];
            if coords[a] < in_shape[a] {
                break;
            }
            coords[a] = 0;
            off -= in_shape[a] * out_strides[a];
        }
    }
    Tensor::new(out_shape, out)
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

// ── windowed self-products ───────────────────────────────────────────

/// Neighborhood Hadamard products: for `x: [B,C,H,W]` and odd `window` d,
/// `R[b,c,oy,ox,h,w] = x[b,c,h,w] * x[b,c,h+oy-r,w+ox-r]` with zero padding
/// outside the image (r = d/2). Output shape `[B,C,d,d,H,W]`.
pub fn hadamard_window<E: Scalar>(x: &Tensor<E>, window: usize) -> Result<Tensor<E>> {
    if x.rank() != 4 {
        return Err(Error::shape("hadamard_window", format!("{:?}", x.shape())));
    }
    if window % 2 == 0 || window == 0 {
        return Err(Error::Contract(format!(
            "hadamard_window requires an odd window, got {window}"
        )));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if window > 2 * h.min(w) - 1 {
        return Err(Error::Contract(format!(
            "window {window} exceeds 2*min(H,W)-1 for spatial {h}x{w}"
        )));
    }
    let r = (window / 2) as isize;
    let hw = h * w;
    let mut out = vec![E::zero(); b * c * window * window * hw];
    for bc in 0..b * c {
        let chan = &x.data()[bc * hw..(bc + 1) * hw];
        for oy in 0..window {
            let dy = oy as isize - r;
            for ox in 0..window {
                let dxo = ox as isize - r;
                let dst = &mut out[((bc * window + oy) * window + ox) * hw..][..hw];
                for hh in 0..h {
                    let sy = hh as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue; // stays zero
                    }
                    for ww in 0..w {
                        let sx = ww as isize + dxo;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[hh * w + ww] = chan[hh * w + ww] * chan[sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, c, window, window, h, w], out)
}

/// Product-rule backward of [`hadamard_window`]: both occurrences of x get
/// a contribution.
pub fn hadamard_window_backward<E: Scalar>(x: &Tensor<E>, window: usize, dy: &[E]) -> Vec<E> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let r = (window / 2) as isize;
    let hw = h * w;
    let mut dx = vec![E::zero(); x.numel()];
    for bc in 0..b * c {
        let chan = &x.data()[bc * hw..(bc + 1) * hw];
        let dchan = &mut dx[bc * hw..(bc + 1) * hw];
        for oy in 0..window {
            let dyo = oy as isize - r;
            for ox in 0..window {
                let dxo = ox as isize - r;
                let g = &dy[((bc * window + oy) * window + ox) * hw..][..hw];
                for hh in 0..h {
                    let sy = hh as isize + dyo;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for ww in 0..w {
                        let sx = ww as isize + dxo;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let gv = g[hh * w + ww];
                        // d/dx[h,w] of x[h,w]*x[sy,sx], plus the mirrored term.
                        dchan[hh * w + ww] =
                            dchan[hh * w + ww] + gv * chan[sy as usize * w + sx as usize];
                        dchan[sy as usize * w + sx as usize] =
                            dchan[sy as usize * w + sx as usize] + gv * chan[hh * w + ww];
                    }
                }
            }
        }
    }
    dx
}

fn check_axis<E: Scalar>(op: &'static str, x: &Tensor<E>, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(Error::Contract(format!(
            "{op}: axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_all_ones_sums_the_window() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let b = Tensor::<f64>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn conv2d_delta_kernel_is_identity() {
        let x = t(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let mut wdata = vec![0.0; 9];
        wdata[4] = 1.0;
        let w = t(&[1, 1, 3, 3], &wdata);
        let b = Tensor::<f64>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_channel_mismatch_names_both_shapes() {
        let x = Tensor::<f64>::ones(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::ones(&[3, 4, 3, 3]);
        let b = Tensor::<f64>::zeros(&[3]);
        let err = conv2d(&x, &w, &b, 1, 1).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[3, 4, 3, 3]"), "{err}");
    }

    #[test]
    fn softmax_basics() {
        let y = softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&t(&[2], &[0.0, 3.0f64.ln()]), 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
        // shift invariance / overflow safety
        let y = softmax(&t(&[2], &[1000.0, 1000.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn maxpool_drops_trailing_odd_edge() {
        let x = Tensor::<f64>::new(vec![1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let y = maxpool2x2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 5.0);
    }

    #[test]
    fn bn_eval_identity_with_unit_running_stats() {
        let x = t(&[1, 2, 2, 2], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.5, 0.25, 3.0]);
        let gamma = Tensor::<f64>::ones(&[2]);
        let beta = Tensor::<f64>::zeros(&[2]);
        let rm = Tensor::<f64>::zeros(&[2]);
        let rv = Tensor::<f64>::ones(&[2]);
        let y = batchnorm2d_eval(&x, &gamma, &beta, &rm, &rv, 1e-5).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f64>::new(vec![2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        let back = permute(&p, &inverse_axes(&[2, 0, 1])).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn concat_axis1() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[9.0, 8.0]);
        let y = concat(&[&a, &b], 1).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn gather_then_scatter_accumulates() {
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = gather_rows(&x, &[2, 0, 2]).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let dx = gather_rows_backward(&[3, 2], &[2, 0, 2], &[1.0; 6]);
        assert_eq!(dx, vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn l2_normalize_zero_input_stays_zero() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let (y, _) = l2_normalize(&x, 1, 1e-8).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hadamard_window_center_is_square() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let r = hadamard_window(&x, 3).unwrap();
        assert_eq!(r.shape(), &[1, 1, 3, 3, 2, 2]);
        // center offset (1,1): x*x
        assert_eq!(r.at(&[0, 0, 1, 1, 1, 1]), 16.0);
        // offset (1,2) means (dy=0,dx=1): x[h,w]*x[h,w+1]
        assert_eq!(r.at(&[0, 0, 1, 2, 0, 0]), 2.0);
        // out-of-range neighbor gives zero
        assert_eq!(r.at(&[0, 0, 1, 2, 0, 1]), 0.0);
    }
}
