//! Teacher-forced forward pass, loss and backward pass.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, ModelKind, Positional};
use super::layers::*;
use super::params::ParamLayout;
use crate::linalg::{gemm, Scalar, View};

/// One training or evaluation example.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    /// Encoder input; empty for decoder-only models.
    pub input: &'a [u16],
    pub target: &'a [u16],
    /// Allowed id range per target position.
    pub ranges: &'a [Range<u32>],
    /// Positions before this index carry no loss.
    pub loss_from: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Softmax over the whole vocabulary.
    Full,
    /// Softmax restricted to each position's allowed subset.
    Masked,
}

pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        let keep = T::of(1.0 / (1.0 - self.p));
        (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.p { T::zero() } else { keep })
            .collect()
    }
}

fn apply_mask<T: Scalar>(x: &mut [T], m: &Option<Vec<T>>) {
    if let Some(m) = m {
        x.iter_mut().zip(m).for_each(|(a, b)| *a *= *b);
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
}

struct EncCache<T> {
    x: Vec<T>,
    n1: Vec<T>,
    inv1: Vec<T>,
    attn: AttnCache<T>,
    m1: Option<Vec<T>>,
    x1: Vec<T>,
    n2: Vec<T>,
    inv2: Vec<T>,
    ffn: FfnCache<T>,
    m2: Option<Vec<T>>,
}

struct DecCache<T> {
    x: Vec<T>,
    n1: Vec<T>,
    inv1: Vec<T>,
    self_attn: AttnCache<T>,
    m1: Option<Vec<T>>,
    x1: Vec<T>,
    cross: Option<(Vec<T>, Vec<T>, AttnCache<T>, Option<Vec<T>>, Vec<T>)>,
    n3: Vec<T>,
    inv3: Vec<T>,
    ffn: FfnCache<T>,
    m3: Option<Vec<T>>,
}

pub struct Forward<T> {
    enc_ids: Vec<u16>,
    dec_ids: Vec<u16>,
    enc_m0: Option<Vec<T>>,
    dec_m0: Option<Vec<T>>,
    enc: Vec<EncCache<T>>,
    enc_pre: Vec<T>,
    enc_inv: Vec<T>,
    /// Normalized encoder output.
    pub memory: Vec<T>,
    enc_buckets: Option<Vec<u32>>,
    dec: Vec<DecCache<T>>,
    dec_pre: Vec<T>,
    dec_inv: Vec<T>,
    /// Normalized decoder output, `len x d_model`.
    pub hidden: Vec<T>,
    dec_buckets: Option<Vec<u32>>,
}

pub struct Net {
    pub cfg: ModelConfig,
    pub layout: ParamLayout,
}

impl Net {
    pub fn new(cfg: ModelConfig) -> Self {
        let layout = ParamLayout::new(&cfg);
        Self { cfg, layout }
    }

    pub fn sos(&self) -> u16 {
        (self.cfg.vocab_size - 2) as u16
    }

    fn embed<T: Scalar>(&self, p: &[T], ids: &[u16]) -> Vec<T> {
        let d = self.cfg.d_model;
        let mut x = Vec::with_capacity(ids.len() * d);
        let mut pe = vec![T::zero(); d];
        for (pos, &id) in ids.iter().enumerate() {
            let e = &p[self.layout.embed + id as usize * d..self.layout.embed + (id as usize + 1) * d];
            if self.cfg.positional == Positional::FixedSinusoidal {
                sinusoid(pos, &mut pe);
                x.extend(e.iter().zip(&pe).map(|(a, b)| *a + *b));
            } else {
                x.extend_from_slice(e);
            }
        }
        x
    }

    fn embed_back<T: Scalar>(&self, g: &mut [T], ids: &[u16], dx: &[T]) {
        let d = self.cfg.d_model;
        for (&id, row) in ids.iter().zip(dx.chunks_exact(d)) {
            let off = self.layout.embed + id as usize * d;
            add_into(&mut g[off..off + d], row);
        }
    }

    /// Decoder inputs: SOS followed by the target shifted right.
    pub fn decoder_inputs(&self, target: &[u16]) -> Vec<u16> {
        let mut v = Vec::with_capacity(target.len());
        if !target.is_empty() {
            v.push(self.sos());
            v.extend_from_slice(&target[..target.len() - 1]);
        }
        v
    }

    pub fn forward<T: Scalar>(&self, p: &[T], input: &[u16], target: &[u16], mut drop: Option<&mut Dropout>) -> Forward<T> {
        let cfg = &self.cfg;
        let (d, h, f) = (cfg.d_model, cfg.n_heads, cfg.d_ff);
        let mut masks = |n: usize| -> Option<Vec<T>> {
            match drop.as_deref_mut() {
                Some(dr) if dr.p > 0.0 => Some(dr.mask(n)),
                _ => None,
            }
        };

        // encoder
        let enc_ids = input.to_vec();
        let le = enc_ids.len();
        let mut enc = Vec::new();
        let (mut enc_m0, mut enc_pre, mut enc_inv, mut memory) = (None, Vec::new(), Vec::new(), Vec::new());
        let (mut enc_buckets, mut enc_bias) = (None, None);
        if cfg.kind == ModelKind::EncoderDecoder {
            if let Some(off) = self.layout.enc_rel {
                let b = bucket_matrix(0, le, le, true, cfg.rel_buckets, cfg.rel_max_distance);
                enc_bias = Some(expand_bias(p, off, h, &b, le, le));
                enc_buckets = Some(b);
            }
            let mut x = self.embed(p, &enc_ids);
            enc_m0 = masks(x.len());
            apply_mask(&mut x, &enc_m0);
            for l in &self.layout.enc {
                let (n1, inv1) = rms_norm(p, l.ln1, &x, d);
                let (mut a, attn) = attention(p, &l.attn, &n1, le, &n1, le, d, h, false, enc_bias.as_deref());
                let m1 = masks(a.len());
                apply_mask(&mut a, &m1);
                let mut x1 = x.clone();
                add_into(&mut x1, &a);
                let (n2, inv2) = rms_norm(p, l.ln2, &x1, d);
                let (mut fo, ffn_c) = ffn(p, l.ff1, l.ff2, &n2, le, d, f);
                let m2 = masks(fo.len());
                apply_mask(&mut fo, &m2);
                let mut x2 = x1.clone();
                add_into(&mut x2, &fo);
                enc.push(EncCache { x, n1, inv1, attn, m1, x1, n2, inv2, ffn: ffn_c, m2 });
                x = x2;
            }
            let (m, inv) = rms_norm(p, self.layout.enc_norm.expect("encoder norm"), &x, d);
            enc_pre = x;
            enc_inv = inv;
            memory = m;
        }

        // decoder
        let dec_ids = self.decoder_inputs(target);
        let ld = dec_ids.len();
        let (mut dec_buckets, mut dec_bias) = (None, None);
        if let Some(off) = self.layout.dec_rel {
            let b = bucket_matrix(0, ld, ld, false, cfg.rel_buckets, cfg.rel_max_distance);
            dec_bias = Some(expand_bias(p, off, h, &b, ld, ld));
            dec_buckets = Some(b);
        }
        let mut x = self.embed(p, &dec_ids);
        let dec_m0 = masks(x.len());
        apply_mask(&mut x, &dec_m0);
        let mut dec = Vec::new();
        for l in &self.layout.dec {
            let (n1, inv1) = rms_norm(p, l.ln1, &x, d);
            let (mut a, self_attn) = attention(p, &l.self_attn, &n1, ld, &n1, ld, d, h, true, dec_bias.as_deref());
            let m1 = masks(a.len());
            apply_mask(&mut a, &m1);
            let mut x1 = x.clone();
            add_into(&mut x1, &a);
            let (x2, cross) = if let Some((ln2, w)) = &l.cross {
                let (n2, inv2) = rms_norm(p, *ln2, &x1, d);
                let (mut c, cc) = attention(p, w, &n2, ld, &memory, le, d, h, false, None);
                let m2 = masks(c.len());
                apply_mask(&mut c, &m2);
                let mut x2 = x1.clone();
                add_into(&mut x2, &c);
                (x2.clone(), Some((n2, inv2, cc, m2, x2)))
            } else {
                (x1.clone(), None)
            };
            let (n3, inv3) = rms_norm(p, l.ln3, &x2, d);
            let (mut fo, ffn_c) = ffn(p, l.ff1, l.ff2, &n3, ld, d, f);
            let m3 = masks(fo.len());
            apply_mask(&mut fo, &m3);
            let mut x3 = x2;
            add_into(&mut x3, &fo);
            dec.push(DecCache { x, n1, inv1, self_attn, m1, x1, cross, n3, inv3, ffn: ffn_c, m3 });
            x = x3;
        }
        let (hidden, dec_inv) = rms_norm(p, self.layout.dec_norm, &x, d);
        Forward {
            enc_ids,
            dec_ids,
            enc_m0,
            dec_m0,
            enc,
            enc_pre,
            enc_inv,
            memory,
            enc_buckets,
            dec,
            dec_pre: x,
            dec_inv,
            hidden,
            dec_buckets,
        }
    }

    /// Backpropagates `dhidden` (gradient at the normalized decoder output).
    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], fw: &Forward<T>, dhidden: &[T]) {
        let cfg = &self.cfg;
        let (d, h, f) = (cfg.d_model, cfg.n_heads, cfg.d_ff);
        let ld = fw.dec_ids.len();
        let le = fw.enc_ids.len();
        let mut dx = rms_norm_back(p, g, self.layout.dec_norm, &fw.dec_pre, &fw.dec_inv, dhidden, d);
        let mut dmemory = vec![T::zero(); fw.memory.len()];
        for (l, c) in self.layout.dec.iter().zip(&fw.dec).rev() {
            // ffn sublayer
            let mut dfo = dx.clone();
            apply_mask(&mut dfo, &c.m3);
            let dn3 = ffn_back(p, g, l.ff1, l.ff2, &c.n3, &c.ffn, &dfo, ld, d, f);
            let x2 = c.cross.as_ref().map(|cr| &cr.4).unwrap_or(&c.x1);
            let dx2 = rms_norm_back(p, g, l.ln3, x2, &c.inv3, &dn3, d);
            add_into(&mut dx, &dx2);
            // cross-attention sublayer
            if let (Some((ln2, w)), Some((n2, inv2, cc, m2, _))) = (&l.cross, &c.cross) {
                let mut dc = dx.clone();
                apply_mask(&mut dc, m2);
                let gr = attention_back(p, g, w, cc, n2, ld, &fw.memory, le, d, h, &dc);
                add_into(&mut dmemory, &gr.dxkv);
                let dx1 = rms_norm_back(p, g, *ln2, &c.x1, inv2, &gr.dxq, d);
                add_into(&mut dx, &dx1);
            }
            // self-attention sublayer
            let mut da = dx.clone();
            apply_mask(&mut da, &c.m1);
            let gr = attention_back(p, g, &l.self_attn, &c.self_attn, &c.n1, ld, &c.n1, ld, d, h, &da);
            if let (Some(off), Some(b)) = (self.layout.dec_rel, &fw.dec_buckets) {
                bias_back(g, off, h, b, &gr.dlogits);
            }
            let mut dn1 = gr.dxq;
            add_into(&mut dn1, &gr.dxkv);
            let dx0 = rms_norm_back(p, g, l.ln1, &c.x, &c.inv1, &dn1, d);
            add_into(&mut dx, &dx0);
        }
        apply_mask(&mut dx, &fw.dec_m0);
        self.embed_back(g, &fw.dec_ids, &dx);

        if cfg.kind == ModelKind::EncoderDecoder {
            let mut dx = rms_norm_back(p, g, self.layout.enc_norm.expect("encoder norm"), &fw.enc_pre, &fw.enc_inv, &dmemory, d);
            for (l, c) in self.layout.enc.iter().zip(&fw.enc).rev() {
                let mut dfo = dx.clone();
                apply_mask(&mut dfo, &c.m2);
                let dn2 = ffn_back(p, g, l.ff1, l.ff2, &c.n2, &c.ffn, &dfo, le, d, f);
                let dx1 = rms_norm_back(p, g, l.ln2, &c.x1, &c.inv2, &dn2, d);
                add_into(&mut dx, &dx1);
                let mut da = dx.clone();
                apply_mask(&mut da, &c.m1);
                let gr = attention_back(p, g, &l.attn, &c.attn, &c.n1, le, &c.n1, le, d, h, &da);
                if let (Some(off), Some(b)) = (self.layout.enc_rel, &fw.enc_buckets) {
                    bias_back(g, off, h, b, &gr.dlogits);
                }
                let mut dn1 = gr.dxq;
                add_into(&mut dn1, &gr.dxkv);
                let dx0 = rms_norm_back(p, g, l.ln1, &c.x, &c.inv1, &dn1, d);
                add_into(&mut dx, &dx0);
            }
            apply_mask(&mut dx, &fw.enc_m0);
            self.embed_back(g, &fw.enc_ids, &dx);
        }
    }

    /// Per-position NLL (nats) of `ex.target` given `hidden`, for positions
    /// `>= loss_from`. When `grad` is given, accumulates `weight * dNLL` into
    /// the output projection and returns the gradient at `hidden`.
    pub fn output_loss<T: Scalar>(
        &self,
        p: &[T],
        grad: Option<&mut [T]>,
        hidden: &[T],
        ex: &Example,
        mode: LossMode,
        weight: T,
    ) -> (Vec<f64>, Option<Vec<T>>) {
        let d = self.cfg.d_model;
        let v = self.cfg.vocab_size;
        let n = ex.target.len();
        // group loss positions by the range of logits they need
        let mut groups: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for pos in ex.loss_from..n {
            let r = match mode {
                LossMode::Full => 0..v as u32,
                LossMode::Masked => ex.ranges[pos].clone(),
            };
            groups.entry((r.start, r.end)).or_default().push(pos);
        }
        let mut nll = vec![0.0f64; n];
        let want_grad = grad.is_some();
        let mut dh = if want_grad { Some(vec![T::zero(); n * d]) } else { None };
        let mut g = grad;
        for ((start, end), positions) in groups {
            let width = (end - start) as usize;
            let rows = positions.len();
            let mut hs = Vec::with_capacity(rows * d);
            for &pos in &positions {
                hs.extend_from_slice(&hidden[pos * d..(pos + 1) * d]);
            }
            let mut logits = vec![T::zero(); rows * width];
            let wv = View::rows(v).at(self.layout.out + start as usize);
            gemm(rows, d, width, T::one(), &hs, View::rows(d), p, wv, T::zero(), &mut logits, View::rows(width));
            for (row, &pos) in logits.chunks_exact_mut(width).zip(&positions) {
                let t = ex.target[pos] as u32;
                assert!(t >= start && t < end, "target {t} outside its subset {start}..{end}");
                let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let z: T = row.iter().map(|x| (*x - m).exp()).sum();
                let lse = m + z.ln();
                nll[pos] = (lse - row[(t - start) as usize]).f64();
                if want_grad {
                    for x in row.iter_mut() {
                        *x = (*x - lse).exp() * weight;
                    }
                    row[(t - start) as usize] -= weight;
                }
            }
            if let (Some(gr), Some(dh)) = (g.as_deref_mut(), dh.as_mut()) {
                gemm(d, rows, width, T::one(), &hs, View::rows(d).t(), &logits, View::rows(width), T::one(), gr, wv);
                let mut dhs = vec![T::zero(); rows * d];
                gemm(rows, width, d, T::one(), &logits, View::rows(width), p, wv.t(), T::zero(), &mut dhs, View::rows(d));
                for (r, &pos) in dhs.chunks_exact(d).zip(&positions) {
                    add_into(&mut dh[pos * d..(pos + 1) * d], r);
                }
            }
        }
        (nll, dh)
    }

    /// Mean NLL over loss positions and its gradient (accumulated into `g`).
    pub fn loss_and_grad<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        ex: &Example,
        mode: LossMode,
        weight: T,
        drop: Option<&mut Dropout>,
    ) -> Vec<f64> {
        let fw = self.forward(p, ex.input, ex.target, drop);
        let (nll, dh) = self.output_loss(p, Some(&mut *g), &fw.hidden, ex, mode, weight);
        self.backward(p, g, &fw, &dh.expect("gradient requested"));
        nll
    }

    /// Per-position NLL without gradients or dropout.
    pub fn nll<T: Scalar>(&self, p: &[T], ex: &Example, mode: LossMode) -> Vec<f64> {
        let fw = self.forward(p, ex.input, ex.target, None);
        self.output_loss(p, None, &fw.hidden, ex, mode, T::one()).0
    }

    /// Full logits `len x vocab` under teacher forcing.
    pub fn logits<T: Scalar>(&self, p: &[T], input: &[u16], target: &[u16]) -> Vec<T> {
        let fw = self.forward(p, input, target, None);
        let (d, v) = (self.cfg.d_model, self.cfg.vocab_size);
        let n = target.len();
        let mut out = vec![T::zero(); n * v];
        gemm(n, d, v, T::one(), &fw.hidden, View::rows(d), p, View::rows(v).at(self.layout.out), T::zero(), &mut out, View::rows(v));
        out
    }
}
