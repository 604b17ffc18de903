//! Forward and backward kernels for the layer types of the counter network.
//!
//! Activations are `[batch, channels, height, width]`. Per-sample work fans
//! out through [`crate::exec`]; every reduction over the batch runs in a fixed
//! order, so results do not depend on the worker count.

use rand::Rng;

use crate::exec;
use crate::rng::RandomSource;

use super::tensor::{gemm, transpose, MatRef, Real, Tensor};

/// Valid output columns `[lo, hi)` for kernel offset `kx`, where the source
/// column is `x + kx - pad`.
fn valid_cols(w: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).min(w);
    let hi = (w + pad).saturating_sub(kx).min(w).max(lo);
    (lo, hi)
}

/// Column matrix of one sample. Row `(ci, ky, kx)` holds, for every output
/// pixel, the input under that kernel tap (zero outside the image). Rows are
/// `ld` apart; the sample occupies `hw` columns starting at `col0`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    cols: &mut [T],
    ld: usize,
    col0: usize,
) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..][..hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * ld + col0..][..hw];
                let (lo, hi) = valid_cols(w, kx, pad);
                for y in 0..h {
                    let dst = &mut row[y * w..][..w];
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize || lo == hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    dst[..lo].fill(T::zero());
                    dst[lo..hi].copy_from_slice(&src[lo + kx - pad..hi + kx - pad]);
                    dst[hi..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients onto the image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ld: usize,
    col0: usize,
    dx: &mut [T],
) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..][..hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * ld + col0..][..hw];
                let (lo, hi) = valid_cols(w, kx, pad);
                if lo == hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w][lo + kx - pad..hi + kx - pad];
                    for (d, v) in dst.iter_mut().zip(&row[y * w + lo..y * w + hi]) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

/// Samples per convolution GEMM group: at least 8, more on small maps so
/// each GEMM has about 1024 columns. Depends on the shape only, so the
/// accumulation order is the same in both execution modes.
fn conv_group(hw: usize) -> usize {
    (1024 / hw.max(1)).clamp(8, 128)
}

/// Column matrix `[c*k*k, g*hw]` of samples `first..first + g`.
fn group_cols<T: Real>(x: &Tensor<T>, first: usize, g: usize, k: usize) -> Vec<T> {
    let (_, c, h, w) = x.dims4();
    let (hw, ckk) = (h * w, c * k * k);
    let mut cols = vec![T::zero(); ckk * g * hw];
    for j in 0..g {
        im2col(&x.data()[(first + j) * c * hw..][..c * hw], c, h, w, k, k / 2, &mut cols, g * hw, j * hw);
    }
    cols
}

/// Stride-1 "same" convolution. `weight` is `[c_out, c_in, k, k]`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let (c_out, c_in, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    assert_eq!(c, c_in, "conv input channels");
    let hw = h * w;
    let ckk = c * k * k;
    let mut out = Tensor::zeros(&[b, c_out, h, w]);
    let group = conv_group(hw);
    exec::for_each_chunk_mut(out.data_mut(), group * c_out * hw, |gi, yg| {
        let g = yg.len() / (c_out * hw);
        let cols = group_cols(x, gi * group, g, k);
        // [c_out, g*hw], then scattered to [g, c_out, hw].
        let mut tmp = vec![T::zero(); c_out * g * hw];
        gemm(T::one(), MatRef::new(weight.data(), c_out, ckk), MatRef::new(&cols, ckk, g * hw), T::zero(), &mut tmp);
        for j in 0..g {
            for co in 0..c_out {
                let src = &tmp[co * g * hw + j * hw..][..hw];
                let bv = bias.data()[co];
                for (o, v) in yg[(j * c_out + co) * hw..][..hw].iter_mut().zip(src) {
                    *o = *v + bv;
                }
            }
        }
    });
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv_backward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> ConvGrads<T> {
    let (b, c, h, w) = x.dims4();
    let (c_out, k) = (weight.shape()[0], weight.shape()[2]);
    let pad = k / 2;
    let hw = h * w;
    let ckk = c * k * k;

    let mut db = Tensor::zeros(&[c_out]);
    for s in 0..b {
        for co in 0..c_out {
            let plane = &dy.data()[(s * c_out + co) * hw..][..hw];
            db.data_mut()[co] += plane.iter().copied().sum::<T>();
        }
    }

    let w_t = transpose(weight.data(), c_out, ckk);
    // Per group: partial dW = dY_g * rows_g and the group's slice of dX.
    let group = conv_group(hw);
    let parts = exec::map_range(b.div_ceil(group), |gi| {
        let first = gi * group;
        let g = group.min(b - first);
        let cols = group_cols(x, first, g, k);
        let mut dyg = vec![T::zero(); c_out * g * hw];
        for j in 0..g {
            for co in 0..c_out {
                let src = &dy.data()[((first + j) * c_out + co) * hw..][..hw];
                dyg[co * g * hw + j * hw..][..hw].copy_from_slice(src);
            }
        }
        // Explicit transposes keep both GEMMs on row-major operands.
        let rows = transpose(&cols, ckk, g * hw);
        let mut dw = vec![T::zero(); c_out * ckk];
        gemm(T::one(), MatRef::new(&dyg, c_out, g * hw), MatRef::new(&rows, g * hw, ckk), T::zero(), &mut dw);
        let dx = need_dx.then(|| {
            let mut dcols = cols;
            gemm(T::one(), MatRef::new(&w_t, ckk, c_out), MatRef::new(&dyg, c_out, g * hw), T::zero(), &mut dcols);
            let mut dxg = vec![T::zero(); g * c * hw];
            for (j, d) in dxg.chunks_mut(c * hw).enumerate() {
                col2im(&dcols, c, h, w, k, pad, g * hw, j * hw, d);
            }
            dxg
        });
        (dw, dx)
    });

    let mut dw = Tensor::zeros(weight.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for (gi, (pdw, pdx)) in parts.into_iter().enumerate() {
        for (a, v) in dw.data_mut().iter_mut().zip(&pdw) {
            *a += *v;
        }
        if let (Some(dx), Some(pdx)) = (dx.as_mut(), pdx) {
            dx.data_mut()[gi * group * c * hw..][..pdx.len()].copy_from_slice(&pdx);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Saved state of a batch-norm forward pass.
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    /// Per-channel `1 / sqrt(var + eps)` of the statistics used.
    pub inv_std: Vec<f64>,
    /// Batch statistics (train mode only): mean and biased variance.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub train: bool,
}

/// `sum f(x_i)` in f64 over four interleaved partial sums, so the loop
/// vectorizes. The order is fixed by the slice alone.
fn sum_by<T: Real>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut it = xs.chunks_exact(4);
    for q in &mut it {
        for (a, v) in acc.iter_mut().zip(q) {
            *a += f(v.f64());
        }
    }
    let tail: f64 = it.remainder().iter().map(|v| f(v.f64())).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Four-lane `sum a_i * b_i` in f64.
fn dot_f64<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (qa, qb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = qa.remainder().iter().zip(qb.remainder()).map(|(x, y)| x.f64() * y.f64()).sum();
    for (x, y) in qa.zip(qb) {
        for i in 0..4 {
            acc[i] += x[i].f64() * y[i].f64();
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn channel_stats<T: Real>(x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let (b, c, h, w) = x.dims4();
    let hw = h * w;
    let n = (b * hw) as f64;
    let stats = exec::map_range(c, |ch| {
        let plane = |s: usize| &x.data()[(s * c + ch) * hw..][..hw];
        let mean = (0..b).map(|s| sum_by(plane(s), |v| v)).sum::<f64>() / n;
        let sq = (0..b).map(|s| sum_by(plane(s), |v| (v - mean) * (v - mean))).sum::<f64>();
        (mean, sq / n)
    });
    stats.into_iter().unzip()
}

/// Batch norm over `(batch, h, w)` per channel. Train mode normalizes with the
/// batch statistics; eval mode with the running ones.
#[allow(clippy::too_many_arguments)]
pub fn bn_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
    train: bool,
) -> (Tensor<T>, BnCache<T>) {
    let (_, c, h, w) = x.dims4();
    let hw = h * w;
    let (mean, var, batch_mean, batch_var) = if train {
        let (m, v) = channel_stats(x);
        (m.clone(), v.clone(), m, v)
    } else {
        (
            running_mean.data().iter().map(|v| v.f64()).collect(),
            running_var.data().iter().map(|v| v.f64()).collect(),
            Vec::new(),
            Vec::new(),
        )
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    exec::for_each_chunk_mut(x_hat.data_mut(), c * hw, |s, xh| {
        for ch in 0..c {
            let src = &x.data()[(s * c + ch) * hw..][..hw];
            for (o, v) in xh[ch * hw..][..hw].iter_mut().zip(src) {
                *o = T::of((v.f64() - mean[ch]) * inv_std[ch]);
            }
        }
    });
    exec::for_each_chunk_mut(y.data_mut(), c * hw, |s, ys| {
        for ch in 0..c {
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            let src = &x_hat.data()[(s * c + ch) * hw..][..hw];
            for (o, v) in ys[ch * hw..][..hw].iter_mut().zip(src) {
                *o = g * *v + bt;
            }
        }
    });
    (y, BnCache { x_hat, inv_std, batch_mean, batch_var, train })
}

pub struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn bn_backward<T: Real>(dy: &Tensor<T>, gamma: &Tensor<T>, cache: &BnCache<T>) -> BnGrads<T> {
    let (b, c, h, w) = dy.dims4();
    let hw = h * w;
    let n = (b * hw) as f64;
    let sums = exec::map_range(c, |ch| {
        let (mut sdy, mut sdyx) = (0.0, 0.0);
        for s in 0..b {
            let off = (s * c + ch) * hw;
            let d = &dy.data()[off..][..hw];
            sdy += sum_by(d, |v| v);
            sdyx += dot_f64(d, &cache.x_hat.data()[off..][..hw]);
        }
        (sdy, sdyx)
    });
    let mut dx = Tensor::zeros(dy.shape());
    exec::for_each_chunk_mut(dx.data_mut(), c * hw, |s, dxs| {
        for ch in 0..c {
            let off = (s * c + ch) * hw;
            let g = gamma.data()[ch].f64() * cache.inv_std[ch];
            let (sdy, sdyx) = sums[ch];
            // dx = g * (dy - mean(dy) - x_hat * mean(dy * x_hat)) in train mode.
            let (k0, k2) = if cache.train { (-g * sdy / n, -g * sdyx / n) } else { (0.0, 0.0) };
            let d = &dy.data()[off..][..hw];
            let xh = &cache.x_hat.data()[off..][..hw];
            for ((o, dv), xv) in dxs[ch * hw..][..hw].iter_mut().zip(d).zip(xh) {
                *o = T::of(g * dv.f64() + k0 + k2 * xv.f64());
            }
        }
    });
    BnGrads {
        dx,
        dgamma: Tensor::from_vec(&[c], sums.iter().map(|s| T::of(s.1)).collect()).unwrap(),
        dbeta: Tensor::from_vec(&[c], sums.iter().map(|s| T::of(s.0)).collect()).unwrap(),
    }
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
    y
}

/// `dy` masked by `y > 0`, where `y` is the ReLU output.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        if *v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// 2x2 stride-2 max pooling, floor semantics on odd sizes. Returns the
/// output and, per output element, the flat input index that won (first
/// maximum in scan order).
pub fn maxpool_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (b, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[b, c, ho, wo]);
    let mut arg = vec![0u32; b * c * ho * wo];
    for p in 0..b * c {
        let src = &x.data()[p * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * oy + dy) * w + 2 * ox + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = p * ho * wo + oy * wo + ox;
                y.data_mut()[o] = src[best];
                arg[o] = (p * h * w + best) as u32;
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<T: Real>(in_shape: &[usize], argmax: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    for (&i, &d) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[i as usize] += d;
    }
    dx
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<T: Real>(len: usize, rate: f64, rng: &mut RandomSource) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect()
}

pub fn apply_mask<T: Real>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
    y
}

/// Global average pool `[b, c, h, w] -> [b, c]`.
pub fn gap_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let hw = h * w;
    let data = x.data().chunks(hw).map(|p| T::of(p.iter().map(|v| v.f64()).sum::<f64>() / hw as f64)).collect();
    Tensor::from_vec(&[b, c], data).unwrap()
}

pub fn gap_backward<T: Real>(in_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let hw = in_shape[2] * in_shape[3];
    let scale = T::of(1.0 / hw as f64);
    let data = dy.data().iter().flat_map(|&d| std::iter::repeat_n(d * scale, hw)).collect();
    Tensor::from_vec(in_shape, data).unwrap()
}

/// Fully connected `[b, in] -> [b, out]` with `weight` `[out, in]`.
pub fn fc_forward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let (b, n_in) = (x.shape()[0], x.shape()[1]);
    let n_out = weight.shape()[0];
    let mut y = Tensor::zeros(&[b, n_out]);
    for row in y.data_mut().chunks_mut(n_out) {
        row.copy_from_slice(bias.data());
    }
    gemm(T::one(), MatRef::new(x.data(), b, n_in), MatRef::t(weight.data(), n_out, n_in), T::one(), y.data_mut());
    y
}

pub fn fc_backward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, n_in) = (x.shape()[0], x.shape()[1]);
    let n_out = weight.shape()[0];
    let mut dx = Tensor::zeros(&[b, n_in]);
    gemm(T::one(), MatRef::new(dy.data(), b, n_out), MatRef::new(weight.data(), n_out, n_in), T::zero(), dx.data_mut());
    let mut dw = Tensor::zeros(&[n_out, n_in]);
    gemm(T::one(), MatRef::t(dy.data(), b, n_out), MatRef::new(x.data(), b, n_in), T::zero(), dw.data_mut());
    let mut db = Tensor::zeros(&[n_out]);
    for row in dy.data().chunks(n_out) {
        for (a, v) in db.data_mut().iter_mut().zip(row) {
            *a += *v;
        }
    }
    (dx, dw, db)
}

/// Row-wise softmax of `[b, classes]` logits, max-shifted.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = logits.shape()[1];
    let mut p = logits.clone();
    for row in p.data_mut().chunks_mut(classes) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += v.f64();
        }
        let inv = T::of(1.0 / sum);
        row.iter_mut().for_each(|v| *v *= inv);
    }
    p
}

/// Mean cross-entropy of `probs` against 0-based `classes`, and its gradient
/// with respect to the logits.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, classes: &[usize]) -> (f64, Tensor<T>) {
    let (b, n) = (probs.shape()[0], probs.shape()[1]);
    let mut loss = 0.0;
    let mut d = probs.clone();
    let inv_b = T::of(1.0 / b as f64);
    for (s, &cls) in classes.iter().enumerate() {
        loss -= probs.data()[s * n + cls].f64().max(1e-300).ln();
        d.data_mut()[s * n + cls] -= T::one();
    }
    d.data_mut().iter_mut().for_each(|v| *v *= inv_b);
    (loss / b as f64, d)
}
