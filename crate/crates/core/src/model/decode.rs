//! Incremental decoding with cached keys and values, and constrained sampling.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::Positional;
use super::layers::{linear, relative_bucket, rms_norm, sinusoid, softmax_prefix};
use super::net::Net;
use super::params::AttnOffsets;
use crate::linalg::{gemm, Scalar, View};

pub struct DecodeState<T> {
    /// Per layer cross-attention keys and values over the encoder output.
    cross: Vec<(Vec<T>, Vec<T>)>,
    mem_len: usize,
    /// Per layer self-attention keys and values of the positions so far.
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    pos: usize,
}

impl<T> DecodeState<T> {
    pub fn position(&self) -> usize {
        self.pos
    }
}

fn attend<T: Scalar>(
    p: &[T],
    w: &AttnOffsets,
    q_in: &[T],
    keys: &[T],
    values: &[T],
    n_keys: usize,
    d: usize,
    heads: usize,
    bias: Option<(&[T], &[u32])>,
) -> Vec<T> {
    let q = linear(p, w.q, q_in, 1, d, d);
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut ctx = vec![T::zero(); d];
    let mut s = vec![T::zero(); n_keys];
    for h in 0..heads {
        gemm(1, dh, n_keys, scale, &q, View::rows(d).at(h * dh), keys, View::rows(d).at(h * dh).t(), T::zero(), &mut s, View::rows(n_keys));
        if let Some((table, buckets)) = bias {
            for (x, b) in s.iter_mut().zip(buckets) {
                *x += table[*b as usize * heads + h];
            }
        }
        softmax_prefix(&mut s, n_keys);
        gemm(1, n_keys, dh, T::one(), &s, View::rows(n_keys), values, View::rows(d).at(h * dh), T::zero(), &mut ctx, View::rows(d).at(h * dh));
    }
    linear(p, w.o, &ctx, 1, d, d)
}

impl Net {
    /// Runs the encoder and precomputes cross-attention keys and values.
    pub fn start_decode<T: Scalar>(&self, p: &[T], input: &[u16]) -> DecodeState<T> {
        let d = self.cfg.d_model;
        let fw = self.forward(p, input, &[], None);
        let le = input.len();
        let cross = self
            .layout
            .dec
            .iter()
            .filter_map(|l| l.cross.as_ref())
            .map(|(_, w)| (linear(p, w.k, &fw.memory, le, d, d), linear(p, w.v, &fw.memory, le, d, d)))
            .collect();
        let n = self.layout.dec.len();
        DecodeState {
            cross,
            mem_len: le,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            pos: 0,
        }
    }

    /// Feeds the decoder input at the current position and returns the
    /// normalized hidden state that predicts the target at that position.
    pub fn decode_step<T: Scalar>(&self, p: &[T], st: &mut DecodeState<T>, token: u16) -> Vec<T> {
        let cfg = &self.cfg;
        let (d, heads, f) = (cfg.d_model, cfg.n_heads, cfg.d_ff);
        let t = st.pos;
        let e = &p[self.layout.embed + token as usize * d..self.layout.embed + (token as usize + 1) * d];
        let mut x = e.to_vec();
        if cfg.positional == Positional::FixedSinusoidal {
            let mut pe = vec![T::zero(); d];
            sinusoid(t, &mut pe);
            x.iter_mut().zip(&pe).for_each(|(a, b)| *a += *b);
        }
        let buckets: Option<Vec<u32>> = self.layout.dec_rel.map(|_| {
            (0..=t)
                .map(|j| relative_bucket(j as i64 - t as i64, false, cfg.rel_buckets, cfg.rel_max_distance) as u32)
                .collect()
        });
        let mut cross_i = 0;
        for (li, l) in self.layout.dec.iter().enumerate() {
            let (n1, _) = rms_norm(p, l.ln1, &x, d);
            st.keys[li].extend(linear(p, l.self_attn.k, &n1, 1, d, d));
            st.values[li].extend(linear(p, l.self_attn.v, &n1, 1, d, d));
            let bias = match (self.layout.dec_rel, &buckets) {
                (Some(off), Some(b)) => Some((&p[off..], b.as_slice())),
                _ => None,
            };
            let a = attend(p, &l.self_attn, &n1, &st.keys[li], &st.values[li], t + 1, d, heads, bias);
            x.iter_mut().zip(&a).for_each(|(u, v)| *u += *v);
            if let Some((ln2, w)) = &l.cross {
                let (n2, _) = rms_norm(p, *ln2, &x, d);
                let (k, v) = &st.cross[cross_i];
                cross_i += 1;
                let c = attend(p, w, &n2, k, v, st.mem_len, d, heads, None);
                x.iter_mut().zip(&c).for_each(|(u, v)| *u += *v);
            }
            let (n3, _) = rms_norm(p, l.ln3, &x, d);
            let mut hdn = linear(p, l.ff1, &n3, 1, d, f);
            hdn.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            });
            let fo = linear(p, l.ff2, &hdn, 1, f, d);
            x.iter_mut().zip(&fo).for_each(|(u, v)| *u += *v);
        }
        st.pos += 1;
        rms_norm(p, self.layout.dec_norm, &x, d).0
    }

    /// Logits of `hidden` restricted to `range`.
    pub fn subset_logits<T: Scalar>(&self, p: &[T], hidden: &[T], range: &Range<u32>) -> Vec<T> {
        let (d, v) = (self.cfg.d_model, self.cfg.vocab_size);
        let width = (range.end - range.start) as usize;
        let mut out = vec![T::zero(); width];
        gemm(1, d, width, T::one(), hidden, View::rows(d), p, View::rows(v).at(self.layout.out + range.start as usize), T::zero(), &mut out, View::rows(width));
        out
    }
}

/// Full-vocabulary probabilities after truncating to `range` and applying
/// `temperature`; every id outside `range` has probability exactly zero.
pub fn masked_distribution(logits_in_range: &[f32], range: &Range<u32>, vocab: usize, temperature: f64) -> Vec<f64> {
    let mut probs = vec![0.0f64; vocab];
    let scaled: Vec<f64> = logits_in_range.iter().map(|&l| l as f64 / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scaled.iter().map(|s| (s - m).exp()).sum();
    for (i, s) in scaled.iter().enumerate() {
        probs[range.start as usize + i] = (s - m).exp() / z;
    }
    probs
}

/// Draws an id from `range`; `temperature == 0` takes the argmax (lowest id on
/// ties).
pub fn sample_from(logits_in_range: &[f32], range: &Range<u32>, temperature: f64, rng: &mut ChaCha8Rng) -> u16 {
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, &l) in logits_in_range.iter().enumerate() {
            if l > logits_in_range[best] {
                best = i;
            }
        }
        return (range.start as usize + best) as u16;
    }
    let scaled: Vec<f64> = logits_in_range.iter().map(|&l| l as f64 / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return (range.start as usize + i) as u16;
        }
        u -= w;
    }
    (range.start as usize + weights.len() - 1) as u16
}

/// What to do at each target position during generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Sample,
    Greedy,
    Force(u16),
}

impl Net {
    /// Autoregressive generation of `ranges.len()` tokens. `rule(pos)` picks
    /// sampling, greedy choice, or a forced token at each position; sampling
    /// uses `temperature` and only ever emits ids inside `ranges[pos]`.
    pub fn generate(
        &self,
        p: &[f32],
        input: &[u16],
        ranges: &[Range<u32>],
        temperature: f64,
        rng: &mut ChaCha8Rng,
        mut rule: impl FnMut(usize) -> StepRule,
    ) -> Vec<u16> {
        let mut st = self.start_decode(p, input);
        let mut out = Vec::with_capacity(ranges.len());
        let mut prev = self.sos();
        for (pos, range) in ranges.iter().enumerate() {
            let hidden = self.decode_step(p, &mut st, prev);
            let tok = match rule(pos) {
                StepRule::Force(t) => t,
                StepRule::Greedy => sample_from(&self.subset_logits(p, &hidden, range), range, 0.0, rng),
                StepRule::Sample => sample_from(&self.subset_logits(p, &hidden, range), range, temperature, rng),
            };
            out.push(tok);
            prev = tok;
        }
        out
    }
}
