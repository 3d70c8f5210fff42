//! Naive nested-loop reference implementations.
//!
//! These are the independent oracles the fast kernels are verified against.
//! They share no code with `tensor::ops` — every index is computed directly
//! from the defining formula, with f64 accumulation.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Plain triple-loop matrix product.
pub fn naive_matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    assert_eq!(b.shape()[0], k);
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a.data()[i * k + p].as_f64() * b.data()[p * n + j].as_f64();
            }
            out[i * n + j] = E::from_f64(acc);
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// Six-nested-loop cross-correlation with bias, matching the conv2d contract.
pub fn naive_conv2d<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Tensor<E> {
    let (b, c_in, h, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (iw + 2 * padding - kw) / stride + 1;
    let mut out = vec![E::zero(); b * c_out * ho * wo];
    for bi in 0..b {
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.data()[co].as_f64();
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [((bi * c_in + ci) * h + iy as usize) * iw + ix as usize]
                                    .as_f64();
                                let wv =
                                    w.data()[((co * c_in + ci) * kh + ky) * kw + kx].as_f64();
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((bi * c_out + co) * ho + oy) * wo + ox] = E::from_f64(acc);
                }
            }
        }
    }
    Tensor::new(vec![b, c_out, ho, wo], out).unwrap()
}

/// Direct 2x2/stride-2 max pooling.
pub fn naive_maxpool2x2<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![E::zero(); b * c * ho * wo];
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x.data()
                                [((bi * c + ci) * h + oy * 2 + dy) * w + ox * 2 + dx]
                                .as_f64();
                            if v > m {
                                m = v;
                            }
                        }
                    }
                    out[((bi * c + ci) * ho + oy) * wo + ox] = E::from_f64(m);
                }
            }
        }
    }
    Tensor::new(vec![b, c, ho, wo], out).unwrap()
}

/// Training-mode batchnorm from the defining formula.
pub fn naive_batchnorm2d_train<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Tensor<E> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let n = (b * h * w) as f64;
    let mut out = vec![E::zero(); x.numel()];
    for ci in 0..c {
        let mut mean = 0.0f64;
        for bi in 0..b {
            for i in 0..h * w {
                mean += x.data()[(bi * c + ci) * h * w + i].as_f64();
            }
        }
        mean /= n;
        let mut var = 0.0f64;
        for bi in 0..b {
            for i in 0..h * w {
                let d = x.data()[(bi * c + ci) * h * w + i].as_f64() - mean;
                var += d * d;
            }
        }
        var /= n;
        let inv = 1.0 / (var + eps).sqrt();
        for bi in 0..b {
            for i in 0..h * w {
                let idx = (bi * c + ci) * h * w + i;
                let xhat = (x.data()[idx].as_f64() - mean) * inv;
                out[idx] =
                    E::from_f64(xhat * gamma.data()[ci].as_f64() + beta.data()[ci].as_f64());
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// Dense scaled dot-product attention, one score row at a time.
pub fn naive_attention<E: Scalar>(q: &Tensor<E>, k: &Tensor<E>, v: &Tensor<E>) -> Tensor<E> {
    let (nq, d) = (q.shape()[0], q.shape()[1]);
    let ns = k.shape()[0];
    let dv = v.shape()[1];
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![E::zero(); nq * dv];
    for i in 0..nq {
        let mut scores = vec![0.0f64; ns];
        for j in 0..ns {
            let mut acc = 0.0;
            for p in 0..d {
                acc += q.data()[i * d + p].as_f64() * k.data()[j * d + p].as_f64();
            }
            scores[j] = acc * scale;
        }
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - mx).exp();
            denom += *s;
        }
        for j in 0..ns {
            let wgt = scores[j] / denom;
            for p in 0..dv {
                let cur = out[i * dv + p].as_f64();
                out[i * dv + p] = E::from_f64(cur + wgt * v.data()[j * dv + p].as_f64());
            }
        }
    }
    Tensor::new(vec![nq, dv], out).unwrap()
}

/// Five-nested-loop neighborhood self-correlation on channel-normalized
/// input: `R[c,oy,ox,h,w] = zhat[c,h,w] * zhat[c,h+oy-r,w+ox-r]`.
/// Takes the raw (unnormalized) feature map and normalizes directly.
pub fn naive_self_correlation<E: Scalar>(z: &Tensor<E>, window: usize, eps: f64) -> Tensor<E> {
    let (c, h, w) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    let r = (window / 2) as isize;
    // channel-unit normalization at every position
    let mut zhat = vec![0.0f64; c * h * w];
    for hh in 0..h {
        for ww in 0..w {
            let mut ss = 0.0;
            for ci in 0..c {
                let v = z.data()[(ci * h + hh) * w + ww].as_f64();
                ss += v * v;
            }
            let inv = 1.0 / (ss + eps).sqrt();
            for ci in 0..c {
                zhat[(ci * h + hh) * w + ww] = z.data()[(ci * h + hh) * w + ww].as_f64() * inv;
            }
        }
    }
    let mut out = vec![E::zero(); c * window * window * h * w];
    for ci in 0..c {
        for oy in 0..window {
            for ox in 0..window {
                for hh in 0..h {
                    for ww in 0..w {
                        let sy = hh as isize + oy as isize - r;
                        let sx = ww as isize + ox as isize - r;
                        let val = if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            zhat[(ci * h + hh) * w + ww]
                                * zhat[(ci * h + sy as usize) * w + sx as usize]
                        };
                        out[(((ci * window + oy) * window + ox) * h + hh) * w + ww] =
                            E::from_f64(val);
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, window, window, h, w], out).unwrap()
}

/// Direct evaluation of one separable matching conv: a 3x3 convolution over
/// the query plane (padding 1) applied independently at every support
/// position, mapping `cin -> cout` channels.
///
/// `t` has shape `[cin, hq, wq, hs, ws]`, kernel `[cout, cin, 3, 3]`.
pub fn naive_match_conv_q<E: Scalar>(t: &Tensor<E>, kernel: &Tensor<E>, bias: &Tensor<E>) -> Tensor<E> {
    let (cin, hq, wq, hs, ws) = (
        t.shape()[0],
        t.shape()[1],
        t.shape()[2],
        t.shape()[3],
        t.shape()[4],
    );
    let cout = kernel.shape()[0];
    let mut out = vec![E::zero(); cout * hq * wq * hs * ws];
    let idx_in = |ci: usize, a: usize, b: usize, c: usize, d: usize| {
        (((ci * hq + a) * wq + b) * hs + c) * ws + d
    };
    let idx_out = |co: usize, a: usize, b: usize, c: usize, d: usize| {
        (((co * hq + a) * wq + b) * hs + c) * ws + d
    };
    for co in 0..cout {
        for qy in 0..hq {
            for qx in 0..wq {
                for sy in 0..hs {
                    for sx in 0..ws {
                        let mut acc = bias.data()[co].as_f64();
                        for ci in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = qy as isize + ky as isize - 1;
                                    let ix = qx as isize + kx as isize - 1;
                                    if iy < 0 || iy >= hq as isize || ix < 0 || ix >= wq as isize {
                                        continue;
                                    }
                                    acc += t.data()
                                        [idx_in(ci, iy as usize, ix as usize, sy, sx)]
                                    .as_f64()
                                        * kernel.data()[((co * cin + ci) * 3 + ky) * 3 + kx]
                                            .as_f64();
                                }
                            }
                        }
                        out[idx_out(co, qy, qx, sy, sx)] = E::from_f64(acc);
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, hq, wq, hs, ws], out).unwrap()
}

/// Same as [`naive_match_conv_q`] but convolving over the support plane.
pub fn naive_match_conv_s<E: Scalar>(t: &Tensor<E>, kernel: &Tensor<E>, bias: &Tensor<E>) -> Tensor<E> {
    let (cin, hq, wq, hs, ws) = (
        t.shape()[0],
        t.shape()[1],
        t.shape()[2],
        t.shape()[3],
        t.shape()[4],
    );
    let cout = kernel.shape()[0];
    let mut out = vec![E::zero(); cout * hq * wq * hs * ws];
    let idx_in = |ci: usize, a: usize, b: usize, c: usize, d: usize| {
        (((ci * hq + a) * wq + b) * hs + c) * ws + d
    };
    let idx_out = |co: usize, a: usize, b: usize, c: usize, d: usize| {
        (((co * hq + a) * wq + b) * hs + c) * ws + d
    };
    for co in 0..cout {
        for qy in 0..hq {
            for qx in 0..wq {
                for sy in 0..hs {
                    for sx in 0..ws {
                        let mut acc = bias.data()[co].as_f64();
                        for ci in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = sy as isize + ky as isize - 1;
                                    let ix = sx as isize + kx as isize - 1;
                                    if iy < 0 || iy >= hs as isize || ix < 0 || ix >= ws as isize {
                                        continue;
                                    }
                                    acc += t.data()
                                        [idx_in(ci, qy, qx, iy as usize, ix as usize)]
                                    .as_f64()
                                        * kernel.data()[((co * cin + ci) * 3 + ky) * 3 + kx]
                                            .as_f64();
                                }
                            }
                        }
                        out[idx_out(co, qy, qx, sy, sx)] = E::from_f64(acc);
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, hq, wq, hs, ws], out).unwrap()
}
