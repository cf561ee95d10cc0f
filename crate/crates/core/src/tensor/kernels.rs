//! Direct-loop numeric kernels on raw row-major buffers.
//!
//! Convolutions run over an explicitly zero-padded copy of the input, so every
//! output pixel performs exactly `d*d` multiply-accumulates per input channel
//! and the executed MAC count equals the analytic cost formulas.

use super::macs::{self, Kind};
use super::Real;

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Geometry of a 2-D convolution over an `[n, c, h, w]` batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn padded_h(&self) -> usize {
        self.h + 2 * self.pad
    }

    pub fn padded_w(&self) -> usize {
        self.w + 2 * self.pad
    }

    /// Output extents, or `None` when the kernel does not fit.
    pub fn output(&self) -> Option<(usize, usize)> {
        if self.stride == 0 || self.d == 0 || self.d > self.padded_h() || self.d > self.padded_w() {
            return None;
        }
        Some((
            (self.padded_h() - self.d) / self.stride + 1,
            (self.padded_w() - self.d) / self.stride + 1,
        ))
    }
}

fn pad_input<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    if g.pad == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (g.padded_h(), g.padded_w());
    let mut out = vec![T::zero(); g.n * g.c * hp * wp];
    for plane in 0..g.n * g.c {
        for r in 0..g.h {
            let src = &x[(plane * g.h + r) * g.w..(plane * g.h + r + 1) * g.w];
            let start = (plane * hp + r + g.pad) * wp + g.pad;
            out[start..start + g.w].copy_from_slice(src);
        }
    }
    out
}

fn unpad_input<T: Real>(gp: &[T], g: &ConvGeom) -> Vec<T> {
    if g.pad == 0 {
        return gp.to_vec();
    }
    let (hp, wp) = (g.padded_h(), g.padded_w());
    let mut out = vec![T::zero(); g.n * g.c * g.h * g.w];
    for plane in 0..g.n * g.c {
        for r in 0..g.h {
            let start = (plane * hp + r + g.pad) * wp + g.pad;
            out[(plane * g.h + r) * g.w..(plane * g.h + r + 1) * g.w]
                .copy_from_slice(&gp[start..start + g.w]);
        }
    }
    out
}

/// Accumulates `wv * padded_plane` (one kernel tap) into an output plane.
#[inline]
fn tap_forward<T: Real>(
    wv: T,
    src_plane: &[T],
    dst_plane: &mut [T],
    wp: usize,
    (oh, ow): (usize, usize),
    (kh, kw, stride): (usize, usize, usize),
) {
    for y in 0..oh {
        let src = &src_plane[(y * stride + kh) * wp + kw..];
        let dst = &mut dst_plane[y * ow..(y + 1) * ow];
        if stride == 1 {
            axpy(wv, &src[..ow], dst);
        } else {
            for (x, o) in dst.iter_mut().enumerate() {
                *o = *o + wv * src[x * stride];
            }
        }
    }
}

/// Backward for one kernel tap: scatters into the padded input gradient and
/// returns the tap's weight gradient contribution.
#[inline]
fn tap_backward<T: Real>(
    wv: T,
    src_plane: &[T],
    gsrc_plane: &mut [T],
    gout_plane: &[T],
    wp: usize,
    (oh, ow): (usize, usize),
    (kh, kw, stride): (usize, usize, usize),
) -> T {
    let mut acc = T::zero();
    for y in 0..oh {
        let base = (y * stride + kh) * wp + kw;
        let gout = &gout_plane[y * ow..(y + 1) * ow];
        if stride == 1 {
            acc = acc + dot(gout, &src_plane[base..base + ow]);
            axpy(wv, gout, &mut gsrc_plane[base..base + ow]);
        } else {
            for (x, &go) in gout.iter().enumerate() {
                let idx = base + x * stride;
                acc = acc + go * src_plane[idx];
                gsrc_plane[idx] = gsrc_plane[idx] + wv * go;
            }
        }
    }
    acc
}

/// Standard convolution (cross-correlation). `x: [n,c,h,w]`, `k: [co,c,d,d]`.
pub fn conv2d_forward<T: Real>(x: &[T], g: &ConvGeom, k: &[T], co: usize) -> Vec<T> {
    let (oh, ow) = g.output().expect("validated geometry");
    let (hp, wp) = (g.padded_h(), g.padded_w());
    let xp = pad_input(x, g);
    let mut out = vec![T::zero(); g.n * co * oh * ow];
    let mut count = 0usize;
    for b in 0..g.n {
        for o in 0..co {
            let dst = &mut out[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            for i in 0..g.c {
                let src = &xp[(b * g.c + i) * hp * wp..(b * g.c + i + 1) * hp * wp];
                for kh in 0..g.d {
                    for kw in 0..g.d {
                        let wv = k[((o * g.c + i) * g.d + kh) * g.d + kw];
                        tap_forward(wv, src, dst, wp, (oh, ow), (kh, kw, g.stride));
                        count += oh * ow;
                    }
                }
            }
        }
    }
    macs::add(Kind::Conv, count);
    out
}

/// Returns `(grad_x, grad_k)`.
pub fn conv2d_backward<T: Real>(
    x: &[T],
    g: &ConvGeom,
    k: &[T],
    co: usize,
    gout: &[T],
) -> (Vec<T>, Vec<T>) {
    let (oh, ow) = g.output().expect("validated geometry");
    let (hp, wp) = (g.padded_h(), g.padded_w());
    let xp = pad_input(x, g);
    let mut gxp = vec![T::zero(); xp.len()];
    let mut gk = vec![T::zero(); k.len()];
    for b in 0..g.n {
        for o in 0..co {
            let go = &gout[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            for i in 0..g.c {
                let plane = (b * g.c + i) * hp * wp..(b * g.c + i + 1) * hp * wp;
                let src = &xp[plane.clone()];
                let gsrc = &mut gxp[plane];
                for kh in 0..g.d {
                    for kw in 0..g.d {
                        let ki = ((o * g.c + i) * g.d + kh) * g.d + kw;
                        let acc =
                            tap_backward(k[ki], src, gsrc, go, wp, (oh, ow), (kh, kw, g.stride));
                        gk[ki] = gk[ki] + acc;
                    }
                }
            }
        }
    }
    (unpad_input(&gxp, g), gk)
}

/// Channel-wise spatial convolution. `x: [n,c,h,w]`, `k: [c,d,d]`.
pub fn depthwise_forward<T: Real>(x: &[T], g: &ConvGeom, k: &[T]) -> Vec<T> {
    let (oh, ow) = g.output().expect("validated geometry");
    let (hp, wp) = (g.padded_h(), g.padded_w());
    let xp = pad_input(x, g);
    let mut out = vec![T::zero(); g.n * g.c * oh * ow];
    let mut count = 0usize;
    for b in 0..g.n {
        for i in 0..g.c {
            let plane = b * g.c + i;
            let src = &xp[plane * hp * wp..(plane + 1) * hp * wp];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for kh in 0..g.d {
                for kw in 0..g.d {
                    let wv = k[(i * g.d + kh) * g.d + kw];
                    tap_forward(wv, src, dst, wp, (oh, ow), (kh, kw, g.stride));
                    count += oh * ow;
                }
            }
        }
    }
    macs::add(Kind::Depthwise, count);
    out
}

pub fn depthwise_backward<T: Real>(x: &[T], g: &ConvGeom, k: &[T], gout: &[T]) -> (Vec<T>, Vec<T>) {
    let (oh, ow) = g.output().expect("validated geometry");
    let (hp, wp) = (g.padded_h(), g.padded_w());
    let xp = pad_input(x, g);
    let mut gxp = vec![T::zero(); xp.len()];
    let mut gk = vec![T::zero(); k.len()];
    for b in 0..g.n {
        for i in 0..g.c {
            let plane = b * g.c + i;
            let range = plane * hp * wp..(plane + 1) * hp * wp;
            let src = &xp[range.clone()];
            let gsrc = &mut gxp[range];
            let go = &gout[plane * oh * ow..(plane + 1) * oh * ow];
            for kh in 0..g.d {
                for kw in 0..g.d {
                    let ki = (i * g.d + kh) * g.d + kw;
                    let acc = tap_backward(k[ki], src, gsrc, go, wp, (oh, ow), (kh, kw, g.stride));
                    gk[ki] = gk[ki] + acc;
                }
            }
        }
    }
    (unpad_input(&gxp, g), gk)
}

/// Per-pixel channel mixing. `x: [n,c,hw]`, `k: [co,c]`.
pub fn pointwise_forward<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    k: &[T],
    co: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * co * hw];
    for b in 0..n {
        for o in 0..co {
            let dst = &mut out[(b * co + o) * hw..(b * co + o + 1) * hw];
            for i in 0..c {
                axpy(
                    k[o * c + i],
                    &x[(b * c + i) * hw..(b * c + i + 1) * hw],
                    dst,
                );
            }
        }
    }
    macs::add(Kind::Pointwise, n * co * c * hw);
    out
}

pub fn pointwise_backward<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    k: &[T],
    co: usize,
    gout: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    for b in 0..n {
        for o in 0..co {
            let go = &gout[(b * co + o) * hw..(b * co + o + 1) * hw];
            for i in 0..c {
                let range = (b * c + i) * hw..(b * c + i + 1) * hw;
                gk[o * c + i] = gk[o * c + i] + dot(go, &x[range.clone()]);
                axpy(k[o * c + i], go, &mut gx[range]);
            }
        }
    }
    (gx, gk)
}

/// Batched matrix product `[bt,m,p] x [bt,p,q] -> [bt,m,q]`.
pub fn matmul_forward<T: Real>(
    a: &[T],
    b: &[T],
    bt: usize,
    m: usize,
    p: usize,
    q: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); bt * m * q];
    for s in 0..bt {
        for i in 0..m {
            let dst = &mut out[(s * m + i) * q..(s * m + i + 1) * q];
            for j in 0..p {
                let av = a[(s * m + i) * p + j];
                axpy(av, &b[(s * p + j) * q..(s * p + j + 1) * q], dst);
            }
        }
    }
    macs::add(Kind::Matmul, bt * m * p * q);
    out
}

pub fn matmul_backward<T: Real>(
    a: &[T],
    b: &[T],
    bt: usize,
    m: usize,
    p: usize,
    q: usize,
    gout: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    for s in 0..bt {
        for i in 0..m {
            let go = &gout[(s * m + i) * q..(s * m + i + 1) * q];
            for j in 0..p {
                let brow = (s * p + j) * q..(s * p + j + 1) * q;
                ga[(s * m + i) * p + j] = dot(go, &b[brow.clone()]);
                axpy(a[(s * m + i) * p + j], go, &mut gb[brow]);
            }
        }
    }
    (ga, gb)
}

/// Swaps the last two axes of a `[bt,m,q]` buffer.
pub fn transpose_last<T: Real>(x: &[T], bt: usize, m: usize, q: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for s in 0..bt {
        for i in 0..m {
            for j in 0..q {
                out[(s * q + j) * m + i] = x[(s * m + i) * q + j];
            }
        }
    }
    out
}

/// Softmax over contiguous rows of length `k`, with max subtraction.
pub fn softmax_rows<T: Real>(x: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let mx = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mx).exp();
            total = total + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    out
}

pub fn softmax_rows_backward<T: Real>(y: &[T], gout: &[T], k: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for ((yr, gr), dst) in y
        .chunks_exact(k)
        .zip(gout.chunks_exact(k))
        .zip(gx.chunks_exact_mut(k))
    {
        let s = dot(yr, gr);
        for ((d, &yy), &gg) in dst.iter_mut().zip(yr).zip(gr) {
            *d = yy * (gg - s);
        }
    }
    gx
}

/// Per-channel batch statistics over `(n, hw)`: returns `(mean, biased var)`.
pub fn channel_moments<T: Real>(x: &[T], n: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let count = T::lit((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s = s + x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                .iter()
                .copied()
                .sum();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            for &e in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                v = v + (e - m) * (e - m);
            }
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}

/// `y = gamma * (x - mean) * inv_std + beta` per channel; returns `(y, xhat)`.
pub fn batchnorm_apply<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for ((yy, xh), &e) in y[range.clone()]
                .iter_mut()
                .zip(&mut xhat[range.clone()])
                .zip(&x[range])
            {
                *xh = (e - mean[ch]) * inv_std[ch];
                *yy = gamma[ch] * *xh + beta[ch];
            }
        }
    }
    (y, xhat)
}

/// Training-mode batchnorm backward; returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_train_backward<T: Real>(
    xhat: &[T],
    n: usize,
    c: usize,
    hw: usize,
    inv_std: &[T],
    gamma: &[T],
    gout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let count = T::lit((n * hw) as f64);
    let mut gx = vec![T::zero(); xhat.len()];
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for b in 0..n {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            sum_g = sum_g + gout[range.clone()].iter().copied().sum();
            sum_gx = sum_gx + dot(&gout[range.clone()], &xhat[range]);
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        let scale = gamma[ch] * inv_std[ch] / count;
        for b in 0..n {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for ((d, &go), &xh) in gx[range.clone()]
                .iter_mut()
                .zip(&gout[range.clone()])
                .zip(&xhat[range])
            {
                *d = scale * (count * go - sum_g - xh * sum_gx);
            }
        }
    }
    (gx, ggamma, gbeta)
}
