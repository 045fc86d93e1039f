use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cache::content_hash;
use crate::codecs::{frame_count, AcousticCodecConfig, SemanticConfig, ACOUSTIC_FRAME_RATE, N_LEVELS, SEMANTIC_RATE};
use crate::corpus::CorpusConfig;
use crate::error::{ensure, Error, Result};
use crate::inference::DEFAULT_TEMPERATURE;
use crate::model::{LrSchedule, ModelConfig, ModelKind, Positional, TrainConfig};
use crate::retrieval::PoolConfig;
use crate::tokens::{Condition, STAGE3_VOCAB_SIZE, VOCAB_SIZE};

pub const SCHEMA_VERSION: u32 = 1;
/// Overrides the configured output root.
pub const OUTPUT_ROOT_ENV: &str = "ACCOMP_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub semantic: SemanticConfig,
    pub acoustic: AcousticCodecConfig,
}

/// Checkpoint selection by FAD on isolated dev vocals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub temperature: f64,
    pub seed: u64,
    /// Evaluate on the first `max_clips` evaluation clips only.
    pub max_clips: Option<usize>,
    /// Also score the retrieval and random baselines.
    pub baselines: bool,
    pub pool: PoolConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            seed: 23,
            max_clips: None,
            baselines: true,
            pool: PoolConfig::default(),
        }
    }
}

/// One experiment: a featurization condition trained and evaluated on a
/// synthetic corpus. `training.seed` seeds model initialization and batch
/// order; `stage3_training.seed` does the same for the fine-stage model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub output_root: Option<PathBuf>,
    /// `clean|noisy/<variant>`, e.g. `noisy/s-sa`.
    pub condition: String,
    /// Disable training-data filtering.
    pub no_filter: bool,
    /// Use relative position biases in the main model.
    pub relative_positions: bool,
    pub corpus: CorpusConfig,
    pub codec: CodecConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub selection: SelectionConfig,
    pub stage3_model: ModelConfig,
    pub stage3_training: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "experiment".into(),
            output_root: None,
            condition: "clean/sa-sa".into(),
            no_filter: false,
            relative_positions: false,
            corpus: CorpusConfig::default(),
            codec: CodecConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            selection: SelectionConfig::default(),
            stage3_model: ModelConfig::stage3(),
            stage3_training: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Named presets: `default` (10 s clips, base model), `desk` (1 s clips,
    /// small model, 3k steps) and `smoke` (seconds-scale pipeline check).
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown profile {other:?} (default, desk, smoke)"))),
        }
    }

    pub fn desk() -> Self {
        let base = Self::default();
        Self {
            name: "desk".into(),
            corpus: CorpusConfig {
                n_train: 200,
                n_eval: 100,
                n_dev: 48,
                duration_s: 1.0,
                ..CorpusConfig::default()
            },
            codec: CodecConfig {
                semantic: SemanticConfig {
                    k: 256,
                    ..SemanticConfig::default()
                },
                acoustic: AcousticCodecConfig {
                    codebook_size: 256,
                    ..AcousticCodecConfig::default()
                },
            },
            model: ModelConfig {
                d_model: 32,
                n_layers_enc: 2,
                n_layers_dec: 2,
                n_heads: 2,
                d_ff: 128,
                max_len: 225,
                ..ModelConfig::default()
            },
            training: TrainConfig {
                batch_size: 8,
                steps: 3000,
                eval_every: 500,
                schedule: LrSchedule {
                    peak_lr: 1e-3,
                    warmup_steps: 300,
                },
                ..TrainConfig::default()
            },
            stage3_model: ModelConfig {
                d_model: 32,
                n_layers_dec: 2,
                n_heads: 2,
                d_ff: 128,
                max_len: 600,
                ..ModelConfig::stage3()
            },
            stage3_training: TrainConfig {
                batch_size: 8,
                steps: 1500,
                eval_every: 0,
                schedule: LrSchedule {
                    peak_lr: 1e-3,
                    warmup_steps: 300,
                },
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                baselines: false,
                ..EvalConfig::default()
            },
            ..base
        }
    }

    pub fn smoke() -> Self {
        let desk = Self::desk();
        Self {
            name: "smoke".into(),
            corpus: CorpusConfig {
                n_train: 10,
                n_eval: 6,
                n_dev: 3,
                ..desk.corpus
            },
            codec: CodecConfig {
                semantic: SemanticConfig {
                    k: 16,
                    iterations: 10,
                    ..SemanticConfig::default()
                },
                acoustic: AcousticCodecConfig {
                    codebook_size: 16,
                    iterations: 5,
                    ..AcousticCodecConfig::default()
                },
            },
            model: ModelConfig {
                d_model: 16,
                n_layers_enc: 1,
                n_layers_dec: 1,
                d_ff: 32,
                ..desk.model
            },
            training: TrainConfig {
                batch_size: 4,
                steps: 20,
                eval_every: 10,
                ..desk.training
            },
            stage3_model: ModelConfig {
                d_model: 16,
                n_layers_dec: 1,
                d_ff: 32,
                ..desk.stage3_model
            },
            stage3_training: TrainConfig {
                batch_size: 4,
                steps: 10,
                ..desk.stage3_training
            },
            ..desk
        }
    }

    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn condition(&self) -> Result<Condition> {
        self.condition.parse()
    }

    /// The configuration with the ablation flags folded in.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        if c.no_filter {
            c.corpus.apply_filter = false;
        }
        if c.relative_positions {
            c.model.positional = Positional::Relative;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.effective();
        ensure!(
            c.schema_version == SCHEMA_VERSION,
            Config,
            "schema version {} (expected {SCHEMA_VERSION})",
            c.schema_version
        );
        c.condition()?.spec().validate()?;
        ensure!(!c.name.is_empty(), Config, "experiment name is empty");
        c.model.validate()?;
        c.stage3_model.validate()?;
        ensure!(
            c.model.kind == ModelKind::EncoderDecoder && c.model.vocab_size == VOCAB_SIZE,
            Config,
            "the main model must be an encoder-decoder over {VOCAB_SIZE} tokens"
        );
        ensure!(
            c.stage3_model.kind == ModelKind::DecoderOnly && c.stage3_model.vocab_size == STAGE3_VOCAB_SIZE,
            Config,
            "the fine-stage model must be decoder-only over {STAGE3_VOCAB_SIZE} tokens"
        );
        let sr = c.corpus.sample_rate;
        ensure!(
            c.codec.semantic.sample_rate == sr && c.codec.acoustic.sample_rate == sr,
            Config,
            "codec sample rates must equal the corpus rate {sr}"
        );
        ensure!(c.codec.semantic.k <= 1024 && c.codec.acoustic.codebook_size <= 1024, Config, "codebooks hold at most 1024 codes");
        ensure!(c.corpus.n_dev >= 2, Config, "checkpoint selection needs at least 2 dev clips");
        ensure!(c.training.eval_every > 0, Config, "training.eval_every must be positive");
        ensure!(c.selection.temperature > 0.0 && c.eval.temperature > 0.0, Config, "temperatures must be positive");
        let len = (c.corpus.duration_s * sr as f64).round() as usize;
        let n_sem = (c.corpus.duration_s * SEMANTIC_RATE).round() as usize;
        let frames = frame_count(len, (sr as f64 / ACOUSTIC_FRAME_RATE) as usize);
        let target = n_sem + 4 * frames;
        ensure!(
            c.model.max_len >= target,
            Config,
            "model.max_len {} below the {target} tokens of a {} s clip",
            c.model.max_len,
            c.corpus.duration_s
        );
        ensure!(
            c.stage3_model.max_len >= N_LEVELS * frames,
            Config,
            "stage3_model.max_len {} below the {} tokens of a {} s clip",
            c.stage3_model.max_len,
            N_LEVELS * frames,
            c.corpus.duration_s
        );
        if c.eval.baselines {
            ensure!(c.corpus.duration_s >= 2.0, Config, "baselines need clips of at least 2 s");
        }
        Ok(())
    }

    /// Hash of the effective configuration, ignoring the name and the
    /// output root.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.effective();
        c.name.clear();
        c.output_root = None;
        content_hash(&c)
    }

    /// `cli`, else the environment override, else the configured root,
    /// else `runs`.
    pub fn output_root(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output_root.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }
}
