//! Forward and backward passes of the transformer building blocks. Activations
//! are row-major `rows x width` buffers; gradients accumulate into a flat
//! buffer parallel to the parameters.

use super::params::AttnOffsets;
use crate::linalg::{gemm, Scalar, View};

pub const NORM_EPS: f64 = 1e-6;

/// `x[n x i] @ W[i x o]` with `W` at `off`.
pub fn linear<T: Scalar>(p: &[T], off: usize, x: &[T], n: usize, i: usize, o: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * o];
    gemm(n, i, o, T::one(), x, View::rows(i), p, View::rows(o).at(off), T::zero(), &mut y, View::rows(o));
    y
}

/// Accumulates `dW += x^T dy` and returns `dx = dy W^T`.
#[allow(clippy::too_many_arguments)]
pub fn linear_back<T: Scalar>(p: &[T], g: &mut [T], off: usize, x: &[T], dy: &[T], n: usize, i: usize, o: usize) -> Vec<T> {
    gemm(i, n, o, T::one(), x, View::rows(i).t(), dy, View::rows(o), T::one(), g, View::rows(o).at(off));
    let mut dx = vec![T::zero(); n * i];
    gemm(n, o, i, T::one(), dy, View::rows(o), p, View::rows(o).at(off).t(), T::zero(), &mut dx, View::rows(i));
    dx
}

/// RMS normalization with gain at `off`; also returns the per-row `1 / rms`.
pub fn rms_norm<T: Scalar>(p: &[T], off: usize, x: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let gain = &p[off..off + d];
    let mut y = Vec::with_capacity(x.len());
    let mut inv = Vec::with_capacity(x.len() / d);
    for row in x.chunks_exact(d) {
        let ms = row.iter().map(|v| *v * *v).sum::<T>() / T::of(d as f64);
        let r = T::one() / (ms + T::of(NORM_EPS)).sqrt();
        inv.push(r);
        y.extend(row.iter().zip(gain).map(|(v, g)| *v * r * *g));
    }
    (y, inv)
}

pub fn rms_norm_back<T: Scalar>(p: &[T], g: &mut [T], off: usize, x: &[T], inv: &[T], dy: &[T], d: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    for (r, ((row, dyr), dxr)) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).enumerate() {
        let ir = inv[r];
        let mut dot = T::zero();
        for j in 0..d {
            let xhat = row[j] * ir;
            g[off + j] += dyr[j] * xhat;
            let dxhat = dyr[j] * p[off + j];
            dot += dxhat * xhat;
        }
        let mean = dot / T::of(d as f64);
        for j in 0..d {
            let xhat = row[j] * ir;
            dxr[j] = (dyr[j] * p[off + j] - xhat * mean) * ir;
        }
    }
    dx
}

pub struct FfnCache<T> {
    pub hidden: Vec<T>,
}

pub fn ffn<T: Scalar>(p: &[T], ff1: usize, ff2: usize, x: &[T], n: usize, d: usize, f: usize) -> (Vec<T>, FfnCache<T>) {
    let mut h = linear(p, ff1, x, n, d, f);
    h.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
    let y = linear(p, ff2, &h, n, f, d);
    (y, FfnCache { hidden: h })
}

#[allow(clippy::too_many_arguments)]
pub fn ffn_back<T: Scalar>(p: &[T], g: &mut [T], ff1: usize, ff2: usize, x: &[T], c: &FfnCache<T>, dy: &[T], n: usize, d: usize, f: usize) -> Vec<T> {
    let mut dh = linear_back(p, g, ff2, &c.hidden, dy, n, f, d);
    dh.iter_mut().zip(&c.hidden).for_each(|(v, h)| {
        if *h <= T::zero() {
            *v = T::zero()
        }
    });
    linear_back(p, g, ff1, x, &dh, n, d, f)
}

pub struct AttnCache<T> {
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `heads x lq x lk` softmax weights.
    pub probs: Vec<T>,
    pub ctx: Vec<T>,
}

/// Multi-head attention of `xq [lq x d]` over `xkv [lk x d]`. `bias` is an
/// optional `heads x lq x lk` additive logit bias.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Scalar>(
    p: &[T],
    w: &AttnOffsets,
    xq: &[T],
    lq: usize,
    xkv: &[T],
    lk: usize,
    d: usize,
    heads: usize,
    causal: bool,
    bias: Option<&[T]>,
) -> (Vec<T>, AttnCache<T>) {
    let q = linear(p, w.q, xq, lq, d, d);
    let k = linear(p, w.k, xkv, lk, d, d);
    let v = linear(p, w.v, xkv, lk, d, d);
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut probs = vec![T::zero(); heads * lq * lk];
    let mut ctx = vec![T::zero(); lq * d];
    for h in (0..heads).filter(|_| lq > 0 && lk > 0) {
        let s = &mut probs[h * lq * lk..(h + 1) * lq * lk];
        gemm(lq, dh, lk, scale, &q, View::rows(d).at(h * dh), &k, View::rows(d).at(h * dh).t(), T::zero(), s, View::rows(lk));
        if let Some(b) = bias {
            s.iter_mut().zip(&b[h * lq * lk..(h + 1) * lq * lk]).for_each(|(x, y)| *x += *y);
        }
        for (i, row) in s.chunks_exact_mut(lk).enumerate() {
            let visible = if causal { i + 1 } else { lk };
            softmax_prefix(row, visible);
        }
        gemm(lq, lk, dh, T::one(), s, View::rows(lk), &v, View::rows(d).at(h * dh), T::zero(), &mut ctx, View::rows(d).at(h * dh));
    }
    let out = linear(p, w.o, &ctx, lq, d, d);
    (out, AttnCache { q, k, v, probs, ctx })
}

/// Softmax over `row[..visible]`, zeros elsewhere.
pub fn softmax_prefix<T: Scalar>(row: &mut [T], visible: usize) {
    let m = row[..visible].iter().cloned().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for x in row[..visible].iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in row[..visible].iter_mut() {
        *x = *x / z;
    }
    for x in row[visible..].iter_mut() {
        *x = T::zero();
    }
}

pub struct AttnGrads<T> {
    pub dxq: Vec<T>,
    pub dxkv: Vec<T>,
    /// Gradient of the pre-softmax logits, `heads x lq x lk`.
    pub dlogits: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn attention_back<T: Scalar>(
    p: &[T],
    g: &mut [T],
    w: &AttnOffsets,
    c: &AttnCache<T>,
    xq: &[T],
    lq: usize,
    xkv: &[T],
    lk: usize,
    d: usize,
    heads: usize,
    dout: &[T],
) -> AttnGrads<T> {
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let dctx = linear_back(p, g, w.o, &c.ctx, dout, lq, d, d);
    let mut dq = vec![T::zero(); lq * d];
    let mut dk = vec![T::zero(); lk * d];
    let mut dv = vec![T::zero(); lk * d];
    let mut dlogits = vec![T::zero(); heads * lq * lk];
    for h in (0..heads).filter(|_| lq > 0 && lk > 0) {
        let pr = &c.probs[h * lq * lk..(h + 1) * lq * lk];
        let ds = &mut dlogits[h * lq * lk..(h + 1) * lq * lk];
        // dP = dctx_h V_h^T
        gemm(lq, dh, lk, T::one(), &dctx, View::rows(d).at(h * dh), &c.v, View::rows(d).at(h * dh).t(), T::zero(), ds, View::rows(lk));
        // dV_h = P^T dctx_h
        gemm(lk, lq, dh, T::one(), pr, View::rows(lk).t(), &dctx, View::rows(d).at(h * dh), T::zero(), &mut dv, View::rows(d).at(h * dh));
        for (prow, drow) in pr.chunks_exact(lk).zip(ds.chunks_exact_mut(lk)) {
            let dot: T = prow.iter().zip(drow.iter()).map(|(a, b)| *a * *b).sum();
            for (dx, pv) in drow.iter_mut().zip(prow) {
                *dx = *pv * (*dx - dot);
            }
        }
        gemm(lq, lk, dh, scale, ds, View::rows(lk), &c.k, View::rows(d).at(h * dh), T::zero(), &mut dq, View::rows(d).at(h * dh));
        gemm(lk, lq, dh, scale, ds, View::rows(lk).t(), &c.q, View::rows(d).at(h * dh), T::zero(), &mut dk, View::rows(d).at(h * dh));
    }
    let dxq = linear_back(p, g, w.q, xq, &dq, lq, d, d);
    let mut dxkv = linear_back(p, g, w.k, xkv, &dk, lk, d, d);
    let dxv = linear_back(p, g, w.v, xkv, &dv, lk, d, d);
    dxkv.iter_mut().zip(&dxv).for_each(|(a, b)| *a += *b);
    AttnGrads { dxq, dxkv, dlogits }
}

/// Sinusoidal position encoding of `pos` into `out` (length `d`, even).
pub fn sinusoid<T: Scalar>(pos: usize, out: &mut [T]) {
    let d = out.len();
    for i in 0..d / 2 {
        let freq = (10000f64).powf(-((2 * i) as f64) / d as f64);
        let a = pos as f64 * freq;
        out[2 * i] = T::of(a.sin());
        out[2 * i + 1] = T::of(a.cos());
    }
}

/// Bucket of the offset `key - query`, log-spaced beyond half the exact range.
pub fn relative_bucket(rel: i64, bidirectional: bool, buckets: usize, max_distance: usize) -> usize {
    let mut ret = 0;
    let mut n = -rel;
    let mut nb = buckets;
    if bidirectional {
        nb /= 2;
        if n < 0 {
            ret += nb;
        }
        n = n.abs();
    } else {
        n = n.max(0);
    }
    let n = n as usize;
    let max_exact = nb / 2;
    if n < max_exact {
        return ret + n;
    }
    let scaled = ((n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (nb - max_exact) as f64) as usize;
    ret + (max_exact + scaled).min(nb - 1)
}

/// `lq x lk` bucket indices for queries at `q0..q0+lq`, keys at `0..lk`.
pub fn bucket_matrix(q0: usize, lq: usize, lk: usize, bidirectional: bool, buckets: usize, max_distance: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(lq * lk);
    for i in 0..lq {
        for j in 0..lk {
            out.push(relative_bucket(j as i64 - (q0 + i) as i64, bidirectional, buckets, max_distance) as u32);
        }
    }
    out
}

/// Expands a `buckets x heads` table into a `heads x lq x lk` bias.
pub fn expand_bias<T: Scalar>(p: &[T], off: usize, heads: usize, buckets: &[u32], lq: usize, lk: usize) -> Vec<T> {
    let mut out = vec![T::zero(); heads * lq * lk];
    for h in 0..heads {
        for (o, b) in out[h * lq * lk..(h + 1) * lq * lk].iter_mut().zip(buckets) {
            *o = p[off + *b as usize * heads + h];
        }
    }
    out
}

pub fn bias_back<T: Scalar>(g: &mut [T], off: usize, heads: usize, buckets: &[u32], dlogits: &[T]) {
    let n = buckets.len();
    for h in 0..heads {
        for (d, b) in dlogits[h * n..(h + 1) * n].iter().zip(buckets) {
            g[off + *b as usize * heads + h] += *d;
        }
    }
}
