use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, ModelKind, Positional};
use crate::linalg::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Ones,
    Zeros,
    /// `N(0, 1 / fan_in)` with `fan_in` the leading dimension.
    FanIn,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
    #[serde(skip, default = "default_init")]
    pub init: Init,
}

fn default_init() -> Init {
    Init::Zeros
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnOffsets {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayer {
    pub ln1: usize,
    pub attn: AttnOffsets,
    pub ln2: usize,
    pub ff1: usize,
    pub ff2: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayer {
    pub ln1: usize,
    pub self_attn: AttnOffsets,
    /// Cross-attention sublayer (`ln2`, weights); absent in decoder-only models.
    pub cross: Option<(usize, AttnOffsets)>,
    pub ln3: usize,
    pub ff1: usize,
    pub ff2: usize,
}

/// Named tensors of a model in declaration (and checkpoint) order, stored in
/// one flat buffer.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub embed: usize,
    pub enc: Vec<EncLayer>,
    pub enc_norm: Option<usize>,
    pub enc_rel: Option<usize>,
    pub dec: Vec<DecLayer>,
    pub dec_norm: usize,
    pub dec_rel: Option<usize>,
    pub out: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let offset = self.total;
        let spec = TensorSpec {
            name,
            shape,
            offset,
            init,
        };
        self.total += spec.numel();
        self.tensors.push(spec);
        offset
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnOffsets {
        AttnOffsets {
            q: self.add(format!("{prefix}.q"), vec![d, d], Init::FanIn),
            k: self.add(format!("{prefix}.k"), vec![d, d], Init::FanIn),
            v: self.add(format!("{prefix}.v"), vec![d, d], Init::FanIn),
            o: self.add(format!("{prefix}.o"), vec![d, d], Init::FanIn),
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let embed = b.add("embed".into(), vec![v, d], Init::Normal);
        let rel_shape = vec![cfg.rel_buckets, cfg.n_heads];
        let mut enc = Vec::new();
        let (mut enc_norm, mut enc_rel) = (None, None);
        if cfg.kind == ModelKind::EncoderDecoder {
            for l in 0..cfg.n_layers_enc {
                let p = format!("enc.{l}");
                enc.push(EncLayer {
                    ln1: b.add(format!("{p}.ln1"), vec![d], Init::Ones),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ln2: b.add(format!("{p}.ln2"), vec![d], Init::Ones),
                    ff1: b.add(format!("{p}.ff1"), vec![d, f], Init::FanIn),
                    ff2: b.add(format!("{p}.ff2"), vec![f, d], Init::FanIn),
                });
            }
            enc_norm = Some(b.add("enc.norm".into(), vec![d], Init::Ones));
            if cfg.positional == Positional::Relative {
                enc_rel = Some(b.add("enc.rel".into(), rel_shape.clone(), Init::Zeros));
            }
        }
        let mut dec = Vec::new();
        for l in 0..cfg.n_layers_dec {
            let p = format!("dec.{l}");
            let ln1 = b.add(format!("{p}.ln1"), vec![d], Init::Ones);
            let self_attn = b.attn(&format!("{p}.self"), d);
            let cross = if cfg.kind == ModelKind::EncoderDecoder {
                let ln2 = b.add(format!("{p}.ln2"), vec![d], Init::Ones);
                Some((ln2, b.attn(&format!("{p}.cross"), d)))
            } else {
                None
            };
            dec.push(DecLayer {
                ln1,
                self_attn,
                cross,
                ln3: b.add(format!("{p}.ln3"), vec![d], Init::Ones),
                ff1: b.add(format!("{p}.ff1"), vec![d, f], Init::FanIn),
                ff2: b.add(format!("{p}.ff2"), vec![f, d], Init::FanIn),
            });
        }
        let dec_norm = b.add("dec.norm".into(), vec![d], Init::Ones);
        let dec_rel = (cfg.positional == Positional::Relative).then(|| b.add("dec.rel".into(), rel_shape, Init::Zeros));
        let out_init = if cfg.zero_init_output { Init::Zeros } else { Init::FanIn };
        let out = b.add("out".into(), vec![d, v], out_init);
        Self {
            tensors: b.tensors,
            total: b.total,
            embed,
            enc,
            enc_norm,
            enc_rel,
            dec,
            dec_norm,
            dec_rel,
            out,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Seeded initial values.
    pub fn init<T: Scalar>(&self, seed: u64) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![T::zero(); self.total];
        for t in &self.tensors {
            let dst = &mut p[t.offset..t.offset + t.numel()];
            match t.init {
                Init::Ones => dst.iter_mut().for_each(|x| *x = T::one()),
                Init::Zeros => {}
                Init::FanIn | Init::Normal => {
                    let std = if t.init == Init::FanIn {
                        (1.0 / t.shape[0] as f64).sqrt()
                    } else {
                        1.0
                    };
                    let n = Normal::new(0.0, std).expect("valid std");
                    dst.iter_mut().for_each(|x| *x = T::of(n.sample(&mut rng)));
                }
            }
        }
        p
    }
}

/// Closed-form parameter count of a configuration.
pub fn analytic_param_count(cfg: &ModelConfig) -> usize {
    let (d, f, v, h) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let ffn = 2 * d * f;
    let attn = 4 * d * d;
    let rel = if cfg.positional == Positional::Relative { cfg.rel_buckets * h } else { 0 };
    let dec_layer = match cfg.kind {
        ModelKind::EncoderDecoder => 2 * attn + ffn + 3 * d,
        ModelKind::DecoderOnly => attn + ffn + 2 * d,
    };
    let enc = match cfg.kind {
        ModelKind::EncoderDecoder => cfg.n_layers_enc * (attn + ffn + 2 * d) + d + rel,
        ModelKind::DecoderOnly => 0,
    };
    2 * v * d + enc + cfg.n_layers_dec * dec_layer + d + rel
}
