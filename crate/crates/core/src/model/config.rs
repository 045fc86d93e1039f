use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tokens::{STAGE3_VOCAB_SIZE, VOCAB_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    EncoderDecoder,
    DecoderOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    FixedSinusoidal,
    /// Learned bucketed bias on attention logits, one table per stack.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub positional: Positional,
    pub max_len: usize,
    pub rel_buckets: usize,
    pub rel_max_distance: usize,
    /// Start the output projection at zero (uniform initial predictions).
    pub zero_init_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::EncoderDecoder,
            vocab_size: VOCAB_SIZE,
            d_model: 128,
            n_layers_enc: 4,
            n_layers_dec: 4,
            n_heads: 4,
            d_ff: 512,
            dropout: 0.1,
            positional: Positional::FixedSinusoidal,
            max_len: 2250,
            rel_buckets: 32,
            rel_max_distance: 128,
            zero_init_output: true,
        }
    }
}

impl ModelConfig {
    /// Decoder-only configuration over the fine-stage vocabulary.
    pub fn stage3() -> Self {
        Self {
            kind: ModelKind::DecoderOnly,
            vocab_size: STAGE3_VOCAB_SIZE,
            n_layers_enc: 0,
            max_len: 6000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.d_model > 0 && self.n_heads > 0, Config, "d_model and n_heads must be positive");
        ensure!(
            self.d_model % self.n_heads == 0,
            Config,
            "d_model {} is not divisible by n_heads {}",
            self.d_model,
            self.n_heads
        );
        ensure!(
            self.positional != Positional::FixedSinusoidal || self.d_model % 2 == 0,
            Config,
            "sinusoidal positions need an even d_model"
        );
        ensure!((0.0..1.0).contains(&self.dropout), Config, "dropout {} outside [0, 1)", self.dropout);
        ensure!(self.d_ff > 0 && self.vocab_size > 1 && self.max_len > 0, Config, "degenerate model dimensions");
        ensure!(self.n_layers_dec > 0, Config, "the decoder needs at least one layer");
        ensure!(
            self.kind == ModelKind::DecoderOnly || self.n_layers_enc > 0,
            Config,
            "the encoder needs at least one layer"
        );
        ensure!(
            self.positional != Positional::Relative || (self.rel_buckets >= 4 && self.rel_max_distance > self.rel_buckets / 4),
            Config,
            "relative positions need at least 4 buckets"
        );
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
