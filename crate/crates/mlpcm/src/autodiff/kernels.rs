//! Single-threaded tensor kernels with a fixed accumulation order.
//!
//! Loops are weight-stationary: for each `(co, ci, ky, kx)` the kernel does a
//! strided 2-D multiply-accumulate over the image, which the compiler
//! vectorizes along the innermost row. Forward and backward share the loop
//! structure, so the evaluation order (and therefore every f32 rounding) is
//! the same on every call on a given platform.

use super::Tensor;

pub const LEAKY_SLOPE: f32 = 0.01;

/// Valid output index bounds for `o*stride + k - pad` to land in `[0, limit)`.
#[inline]
fn conv_bounds(limit: usize, out_len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if limit + pad > k { ((limit + pad - k - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

pub fn conv2d_out_shape(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> [usize; 4] {
    let oh = (x.h() + 2 * pad - w.h()) / stride + 1;
    let ow = (x.w() + 2 * pad - w.w()) / stride + 1;
    [x.n(), w.shape[0], oh, ow]
}

/// `x: [n, ci, h, w]`, `w: [co, ci, kh, kw]`, `b: [1, co, 1, 1]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (ci, kh, kw) = (w.shape[1], w.shape[2], w.shape[3]);
    assert_eq!(x.c(), ci, "conv2d input channels");
    assert_eq!(b.c(), w.shape[0], "conv2d bias channels");
    let shape = conv2d_out_shape(x, w, stride, pad);
    let [n, co, oh, ow] = shape;
    let mut y = Tensor::zeros(shape);
    for ni in 0..n {
        for c in 0..co {
            let bias = b.data[c];
            let base = y.idx(ni, c, 0, 0);
            y.data[base..base + oh * ow].fill(bias);
        }
    }
    for ni in 0..n {
        for c in 0..co {
            for ic in 0..ci {
                for ky in 0..kh {
                    let (oy0, oy1) = conv_bounds(x.h(), oh, stride, ky, pad);
                    for kx in 0..kw {
                        let wv = w.at(c, ic, ky, kx);
                        let (ox0, ox1) = conv_bounds(x.w(), ow, stride, kx, pad);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let yrow = y.idx(ni, c, oy, 0);
                            let xrow = x.idx(ni, ic, iy, 0);
                            for ox in ox0..ox1 {
                                let ix = ox * stride + kx - pad;
                                y.data[yrow + ox] += wv * x.data[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d`] w.r.t. input, weight, and bias.
pub fn conv2d_grad(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (co, ci, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    let (n, oh, ow) = (gy.n(), gy.h(), gy.w());
    let mut gx = Tensor::zeros(x.shape);
    let mut gw = Tensor::zeros(w.shape);
    let mut gb = Tensor::zeros([1, co, 1, 1]);
    for ni in 0..n {
        for c in 0..co {
            let mut acc = 0.0f32;
            let row = gy.idx(ni, c, 0, 0);
            for i in 0..oh * ow {
                acc += gy.data[row + i];
            }
            gb.data[c] += acc;
            for ic in 0..ci {
                for ky in 0..kh {
                    let (oy0, oy1) = conv_bounds(x.h(), oh, stride, ky, pad);
                    for kx in 0..kw {
                        let wv = w.at(c, ic, ky, kx);
                        let (ox0, ox1) = conv_bounds(x.w(), ow, stride, kx, pad);
                        let mut wacc = 0.0f32;
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let grow = gy.idx(ni, c, oy, 0);
                            let xrow = x.idx(ni, ic, iy, 0);
                            for ox in ox0..ox1 {
                                let ix = ox * stride + kx - pad;
                                let g = gy.data[grow + ox];
                                gx.data[xrow + ix] += g * wv;
                                wacc += g * x.data[xrow + ix];
                            }
                        }
                        let gi = gw.idx(c, ic, ky, kx);
                        gw.data[gi] += wacc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn conv_t2d_out_shape(x: &Tensor, w: &Tensor, stride: usize) -> [usize; 4] {
    let oh = (x.h() - 1) * stride + w.shape[2];
    let ow = (x.w() - 1) * stride + w.shape[3];
    [x.n(), w.shape[1], oh, ow]
}

/// Transposed convolution, zero padding. `x: [n, ci, h, w]`,
/// `w: [ci, co, kh, kw]`, `b: [1, co, 1, 1]`.
pub fn conv_t2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    let (ci, co, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    assert_eq!(x.c(), ci, "conv_t2d input channels");
    assert_eq!(b.c(), co, "conv_t2d bias channels");
    let shape = conv_t2d_out_shape(x, w, stride);
    let [n, _, oh, ow] = shape;
    let mut y = Tensor::zeros(shape);
    for ni in 0..n {
        for c in 0..co {
            let bias = b.data[c];
            let base = y.idx(ni, c, 0, 0);
            y.data[base..base + oh * ow].fill(bias);
        }
    }
    for ni in 0..n {
        for ic in 0..ci {
            for c in 0..co {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.at(ic, c, ky, kx);
                        for iy in 0..x.h() {
                            let yrow = y.idx(ni, c, iy * stride + ky, kx);
                            let xrow = x.idx(ni, ic, iy, 0);
                            for ix in 0..x.w() {
                                y.data[yrow + ix * stride] += wv * x.data[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv_t2d`] w.r.t. input, weight, and bias.
pub fn conv_t2d_grad(x: &Tensor, w: &Tensor, gy: &Tensor, stride: usize) -> (Tensor, Tensor, Tensor) {
    let (ci, co, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    let n = x.n();
    let mut gx = Tensor::zeros(x.shape);
    let mut gw = Tensor::zeros(w.shape);
    let mut gb = Tensor::zeros([1, co, 1, 1]);
    for ni in 0..n {
        for c in 0..co {
            let mut acc = 0.0f32;
            let row = gy.idx(ni, c, 0, 0);
            for i in 0..gy.h() * gy.w() {
                acc += gy.data[row + i];
            }
            gb.data[c] += acc;
        }
        for ic in 0..ci {
            for c in 0..co {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.at(ic, c, ky, kx);
                        let mut wacc = 0.0f32;
                        for iy in 0..x.h() {
                            let grow = gy.idx(ni, c, iy * stride + ky, kx);
                            let xrow = x.idx(ni, ic, iy, 0);
                            for ix in 0..x.w() {
                                let g = gy.data[grow + ix * stride];
                                gx.data[xrow + ix] += g * wv;
                                wacc += g * x.data[xrow + ix];
                            }
                        }
                        let gi = gw.idx(ic, c, ky, kx);
                        gw.data[gi] += wacc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v }).collect();
    Tensor { shape: x.shape, data }
}

/// Uses the negative-side slope at exactly zero.
pub fn leaky_relu_grad(x: &Tensor, gy: &Tensor) -> Tensor {
    let data = x
        .data
        .iter()
        .zip(&gy.data)
        .map(|(&v, &g)| if v > 0.0 { g } else { LEAKY_SLOPE * g })
        .collect();
    Tensor { shape: x.shape, data }
}

pub fn concat_c(parts: &[&Tensor]) -> Tensor {
    let first = parts[0];
    let (n, h, w) = (first.n(), first.h(), first.w());
    let c_total: usize = parts.iter().map(|p| p.c()).sum();
    for p in parts {
        assert!(p.n() == n && p.h() == h && p.w() == w, "concat_c spatial mismatch");
    }
    let mut y = Tensor::zeros([n, c_total, h, w]);
    for ni in 0..n {
        let mut co = 0;
        for p in parts {
            for c in 0..p.c() {
                let src = p.idx(ni, c, 0, 0);
                let dst = y.idx(ni, co, 0, 0);
                y.data[dst..dst + h * w].copy_from_slice(&p.data[src..src + h * w]);
                co += 1;
            }
        }
    }
    y
}

pub fn slice_c(x: &Tensor, from: usize, to: usize) -> Tensor {
    assert!(from < to && to <= x.c(), "slice_c range");
    let (n, h, w) = (x.n(), x.h(), x.w());
    let mut y = Tensor::zeros([n, to - from, h, w]);
    for ni in 0..n {
        for c in from..to {
            let src = x.idx(ni, c, 0, 0);
            let dst = y.idx(ni, c - from, 0, 0);
            y.data[dst..dst + h * w].copy_from_slice(&x.data[src..src + h * w]);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data)
    }

    /// Direct quadruple-loop reference with explicit bounds checks.
    fn conv2d_ref(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [n, co, oh, ow] = conv2d_out_shape(x, w, stride, pad);
        let mut y = Tensor::zeros([n, co, oh, ow]);
        for ni in 0..n {
            for c in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data[c] as f64;
                        for ic in 0..x.c() {
                            for ky in 0..w.h() {
                                for kx in 0..w.w() {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h() && (ix as usize) < x.w() {
                                        acc += (w.at(c, ic, ky, kx) as f64)
                                            * (x.at(ni, ic, iy as usize, ix as usize) as f64);
                                    }
                                }
                            }
                        }
                        let yi = y.idx(ni, c, oy, ox);
                        y.data[yi] = acc as f32;
                    }
                }
            }
        }
        y
    }

    fn conv_t2d_ref(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
        let [n, co, oh, ow] = conv_t2d_out_shape(x, w, stride);
        let mut y = Tensor::zeros([n, co, oh, ow]);
        for ni in 0..n {
            for c in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data[c] as f64;
                        for ic in 0..x.c() {
                            for ky in 0..w.h() {
                                for kx in 0..w.w() {
                                    if oy >= ky && ox >= kx {
                                        let (ry, rx) = (oy - ky, ox - kx);
                                        if ry % stride == 0 && rx % stride == 0 {
                                            let (iy, ix) = (ry / stride, rx / stride);
                                            if iy < x.h() && ix < x.w() {
                                                acc += (w.at(ic, c, ky, kx) as f64)
                                                    * (x.at(ni, ic, iy, ix) as f64);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        let yi = y.idx(ni, c, oy, ox);
                        y.data[yi] = acc as f32;
                    }
                }
            }
        }
        y
    }

    fn close(a: &Tensor, b: &Tensor, tol: f32) {
        assert_eq!(a.shape, b.shape);
        for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
            assert!((x - y).abs() <= tol * x.abs().max(1.0), "elem {i}: {x} vs {y}");
        }
    }

    #[test]
    fn conv2d_matches_reference_over_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..30 {
            let (n, ci, co) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
            let k = [1, 2, 3][rng.gen_range(0..3)];
            let stride = rng.gen_range(1..3);
            let pad = rng.gen_range(0..=k / 2 + 1);
            let h = rng.gen_range(k.max(3)..10);
            let w_ = rng.gen_range(k.max(3)..10);
            if (h + 2 * pad) < k || (w_ + 2 * pad) < k {
                continue;
            }
            let x = rand_tensor(&mut rng, [n, ci, h, w_]);
            let w = rand_tensor(&mut rng, [co, ci, k, k]);
            let b = rand_tensor(&mut rng, [1, co, 1, 1]);
            close(&conv2d(&x, &w, &b, stride, pad), &conv2d_ref(&x, &w, &b, stride, pad), 1e-5);
        }
    }

    #[test]
    fn conv_t2d_matches_reference_over_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        for _ in 0..30 {
            let (n, ci, co) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
            let k = rng.gen_range(1..4);
            let stride = rng.gen_range(1..3);
            let h = rng.gen_range(1..8);
            let w_ = rng.gen_range(1..8);
            let x = rand_tensor(&mut rng, [n, ci, h, w_]);
            let w = rand_tensor(&mut rng, [ci, co, k, k]);
            let b = rand_tensor(&mut rng, [1, co, 1, 1]);
            close(&conv_t2d(&x, &w, &b, stride), &conv_t2d_ref(&x, &w, &b, stride), 1e-5);
        }
    }

    #[test]
    fn slice_inverts_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let a = rand_tensor(&mut rng, [2, 3, 4, 5]);
        let b = rand_tensor(&mut rng, [2, 2, 4, 5]);
        let cat = concat_c(&[&a, &b]);
        assert_eq!(slice_c(&cat, 0, 3), a);
        assert_eq!(slice_c(&cat, 3, 5), b);
    }

    #[test]
    fn leaky_relu_slope_on_negative_side() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-2.0, -0.0, 0.5, 3.0]);
        let y = leaky_relu(&x);
        assert_eq!(y.data, vec![-0.02, 0.0, 0.5, 3.0]);
        let g = leaky_relu_grad(&x, &Tensor::from_vec([1, 1, 1, 4], vec![1.0; 4]));
        assert_eq!(g.data, vec![0.01, 0.01, 1.0, 1.0]);
    }
}
