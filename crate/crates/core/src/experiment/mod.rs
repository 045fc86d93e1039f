//! Experiment orchestration: corpus, codecs, fine-stage model, tokenized
//! data, main model with dev-FAD checkpoint selection, evaluation and
//! report. Every stage is cached under the hash of its inputs.

mod cache;
mod compare;
mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::codecs::{split_codes, train_acoustic_codec, train_semantic, AcousticCodec, SemanticQuantizer};
use crate::corpus::{build_corpus, CorpusManifest, ManifestEntry, StemKind, VocalKind};
use crate::error::{ensure, Error, Result};
use crate::evaluation::{
    coarse_nll, eval_fad, evaluate, fad_of_instrumentals, nll_examples, EvalClip, EvalReport, Embedder,
};
use crate::inference::{derive_seed, LongFormConfig, Pipeline, ProbeClip};
use crate::model::{train, EvalMetrics, Model, ModelConfig, TrainConfig, TrainExample, TrainLogRecord};
use crate::retrieval::{build_pool, estimate_tempo, random_baseline, retrieve, RetrievalPool};
use crate::tokens::{build_input, build_stage3, FeaturizationSpec, TokenizedDataset, TokenizedExample};

pub use cache::{content_hash, read_json, run_stage, stage_dir, write_json, StageStatus, STAGE_MARKER};
pub use compare::{compare_conditions, Comparison, ComparisonRow};
pub use config::{
    CodecConfig, EvalConfig, ExperimentConfig, SelectionConfig, DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENV, SCHEMA_VERSION,
};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));
pub const SEMANTIC_FILE: &str = "semantic.bin";
pub const ACOUSTIC_FILE: &str = "acoustic.bin";
pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const EVAL_FILE: &str = "eval.json";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";
pub const TRAIN_TOKENS_DIR: &str = "train";

/// Seed stream of the noise added to training inputs.
const NOISE_STREAM: u64 = 0x6e6f_6973;
/// Seed stream of the random baseline.
const RANDOM_BASELINE_STREAM: u64 = 0x7261_6e64;

/// A failure tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait Tag<T> {
    fn stage(self, stage: &str) -> std::result::Result<T, StageError>;
}

impl<T> Tag<T> for Result<T> {
    fn stage(self, stage: &str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError {
            stage: stage.into(),
            error,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: usize,
    pub best_step: Option<usize>,
    pub final_train_nll: f64,
    pub log: Vec<TrainLogRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub retrieval_fad: f64,
    pub random_fad: f64,
    pub n_clips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStageOutput {
    pub eval: EvalReport,
    pub baselines: Option<BaselineReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub version: String,
    pub config_hash: String,
    pub name: String,
    pub condition: String,
    pub seed: u64,
    pub fad_i: f64,
    pub fad_s: f64,
    /// `fad_i - fad_s`.
    pub gap: f64,
    pub nll_i: f64,
    pub nll_s: f64,
    pub best_step: Option<usize>,
    pub steps: usize,
    pub n_clips: usize,
    pub embedder_seed: u64,
    pub regularized: bool,
    pub baselines: Option<BaselineReport>,
    pub stage_keys: BTreeMap<String, String>,
}

/// Directories of every stage of one experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub corpus: PathBuf,
    pub codec: PathBuf,
    pub stage3: PathBuf,
    pub tokens: PathBuf,
    pub model: PathBuf,
    pub pool: Option<PathBuf>,
    pub eval: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Directory holding `report.json` and `config.json`.
    pub dir: PathBuf,
    pub report: ExperimentReport,
    pub stages: Vec<StageStatus>,
    pub artifacts: Artifacts,
}

pub fn load_codecs(dir: &Path) -> Result<(SemanticQuantizer, AcousticCodec)> {
    Ok((
        SemanticQuantizer::load(dir.join(SEMANTIC_FILE))?,
        AcousticCodec::load(dir.join(ACOUSTIC_FILE))?,
    ))
}

/// Mixtures, separated vocals and derived instrumentals of the kept
/// training clips.
pub fn codec_training_audio(manifest: &CorpusManifest, corpus_dir: &Path) -> Result<Vec<Waveform>> {
    let mut audio = Vec::new();
    for e in manifest.training() {
        for kind in [StemKind::Mix, e.vocal_stem(), e.instrumental_stem()] {
            audio.push(e.load_stem(corpus_dir, kind)?);
        }
    }
    ensure!(!audio.is_empty(), Precondition, "no training clips survive filtering");
    Ok(audio)
}

/// Fine-stage examples from the training instrumentals: coarse prompt, loss
/// on the fine positions only.
pub fn stage3_examples(manifest: &CorpusManifest, corpus_dir: &Path, codec: &AcousticCodec) -> Result<Vec<TrainExample>> {
    manifest
        .training()
        .map(|e| {
            let w = e.load_stem(corpus_dir, e.instrumental_stem())?;
            let (coarse, fine) = split_codes(&codec.encode_matrix(&w)?, w.duration_s());
            let t = build_stage3(&coarse, &fine)?;
            Ok(TrainExample {
                input: Vec::new(),
                ranges: t.schedule.ranges(),
                target: t.ids,
                loss_from: coarse.len(),
            })
        })
        .collect()
}

/// Encoder inputs from the training vocals (with per-clip noise) and
/// targets from the training instrumentals.
pub fn tokenize_training(
    manifest: &CorpusManifest,
    corpus_dir: &Path,
    condition: &str,
    spec: &FeaturizationSpec,
    semantic: &SemanticQuantizer,
    codec: &AcousticCodec,
) -> Result<TokenizedDataset> {
    let examples = manifest
        .training()
        .map(|e| {
            let vocal = e.load_stem(corpus_dir, e.vocal_stem())?;
            let instr = e.load_stem(corpus_dir, e.instrumental_stem())?;
            let input = build_input(&vocal, spec, semantic, codec, derive_seed(e.seed, NOISE_STREAM))?;
            let target = spec.target(&semantic.encode(&instr)?, &codec.encode(&instr)?.0)?;
            Ok(TokenizedExample {
                clip_id: e.clip_id.clone(),
                featurization: condition.into(),
                input,
                target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenizedDataset { examples })
}

pub fn train_examples(ds: &TokenizedDataset) -> Vec<TrainExample> {
    ds.examples
        .iter()
        .map(|e| TrainExample {
            input: e.input.ids.clone(),
            ranges: e.target.schedule.ranges(),
            target: e.target.ids.clone(),
            loss_from: 0,
        })
        .collect()
}

/// Memorization-probe clips: the training inputs and the semantic codes of
/// the training instrumentals.
pub fn probe_clips(ds: &TokenizedDataset, limit: Option<usize>) -> Vec<ProbeClip> {
    ds.examples
        .iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|e| {
            let n_sem = e
                .target
                .ids
                .iter()
                .take_while(|&&id| (id as u32) < crate::tokens::SEMANTIC_SIZE)
                .count();
            ProbeClip {
                clip_id: e.clip_id.clone(),
                input: e.input.ids.clone(),
                semantic: e.target.ids[..n_sem].to_vec(),
            }
        })
        .collect()
}

pub fn load_clips<'a>(
    entries: impl Iterator<Item = &'a ManifestEntry>,
    corpus_dir: &Path,
    limit: Option<usize>,
) -> Result<Vec<EvalClip>> {
    entries
        .take(limit.unwrap_or(usize::MAX))
        .map(|e| EvalClip::load(e, corpus_dir))
        .collect()
}

/// FAD of the retrieval and random baselines on `clips`. The retrieval
/// query tempo is estimated from the ground-truth instrumental (metadata
/// for clips under 5 s).
pub fn score_baselines(
    clips: &[EvalClip],
    entries: &[&ManifestEntry],
    pool: &RetrievalPool,
    embedder: &Embedder,
    seed: u64,
) -> Result<BaselineReport> {
    ensure!(clips.len() == entries.len(), Shape, "one manifest entry per clip expected");
    let mut retrieved = Vec::with_capacity(clips.len());
    let mut random = Vec::with_capacity(clips.len());
    for (i, (c, e)) in clips.iter().zip(entries).enumerate() {
        let tempo = if c.instrumental.duration_s() >= 5.0 {
            estimate_tempo(&c.instrumental)?
        } else {
            e.tempo_bpm
        };
        retrieved.push(retrieve(&c.isolated_vocal, tempo, pool)?.instrumental);
        let stream = derive_seed(seed, RANDOM_BASELINE_STREAM);
        random.push(random_baseline(pool, derive_seed(stream, i as u64), c.instrumental.duration_s())?.instrumental);
    }
    Ok(BaselineReport {
        retrieval_fad: fad_of_instrumentals(embedder, clips, &retrieved)?.fad,
        random_fad: fad_of_instrumentals(embedder, clips, &random)?.fad,
        n_clips: clips.len(),
    })
}

/// Trains the fine-stage model on the training instrumentals and writes
/// the checkpoint and log into `out_dir`.
pub fn train_stage3_model(
    manifest: &CorpusManifest,
    corpus_dir: &Path,
    codec: &AcousticCodec,
    model_cfg: &ModelConfig,
    training: &TrainConfig,
    out_dir: &Path,
) -> Result<()> {
    let data = stage3_examples(manifest, corpus_dir, codec)?;
    let mut model = Model::new(model_cfg.clone(), derive_seed(training.seed, 1))?;
    let outcome = train(&mut model, &data, training, |_, _| Ok(None))?;
    model.save(out_dir.join(MODEL_FILE))?;
    write_json(
        &out_dir.join(TRAIN_LOG_FILE),
        &TrainingSummary {
            steps: training.steps,
            best_step: None,
            final_train_nll: outcome.losses.last().copied().unwrap_or(f64::NAN),
            log: outcome.log,
        },
    )
}

/// Inputs of the main-model training stage.
pub struct MainTraining<'a> {
    pub manifest: &'a CorpusManifest,
    pub corpus_dir: &'a Path,
    pub data: &'a TokenizedDataset,
    pub spec: FeaturizationSpec,
    pub semantic: &'a SemanticQuantizer,
    pub codec: &'a AcousticCodec,
    pub stage3: &'a Model,
    pub model: &'a ModelConfig,
    pub training: &'a TrainConfig,
    pub selection: &'a SelectionConfig,
}

/// Trains the main model, keeps the checkpoint with the lowest dev FAD_i
/// and writes it with the log into `out_dir`.
pub fn train_main_model(t: &MainTraining, out_dir: &Path) -> Result<()> {
    let embedder = Embedder::default();
    let data = train_examples(t.data);
    let dev = load_clips(t.manifest.dev(), t.corpus_dir, None)?;
    let dev_nll = nll_examples(&dev, VocalKind::Isolated, &t.spec, t.semantic, t.codec, t.selection.seed)?;
    let mut model = Model::new(t.model.clone(), derive_seed(t.training.seed, 1))?;
    let outcome = train(&mut model, &data, t.training, |m, step| {
        let p = Pipeline {
            semantic: t.semantic,
            codec: t.codec,
            model: m,
            stage3: t.stage3,
            long_form: LongFormConfig::default(),
        };
        let fad = eval_fad(&p, &embedder, &dev, VocalKind::Isolated, t.spec, t.selection.temperature, t.selection.seed)?;
        let nll = coarse_nll(m, &dev_nll)?;
        log::info!("step {step}: dev FAD_i {:.4}, dev coarse NLL {nll:.4}", fad.fad);
        Ok(Some(EvalMetrics {
            score: fad.fad,
            dev_nll_coarse: Some(nll),
            dev_fad_i: Some(fad.fad),
            dev_fad_s: None,
        }))
    })?;
    if let Some(best) = outcome.best_params {
        model.params = best;
    }
    model.save(out_dir.join(MODEL_FILE))?;
    write_json(
        &out_dir.join(TRAIN_LOG_FILE),
        &TrainingSummary {
            steps: t.training.steps,
            best_step: outcome.best_step,
            final_train_nll: outcome.losses.last().copied().unwrap_or(f64::NAN),
            log: outcome.log,
        },
    )
}

fn key_of<T: Serialize>(stage: &str, upstream: &[&str], config: &T) -> Result<String> {
    #[derive(Serialize)]
    struct KeyInput<'a, T> {
        stage: &'a str,
        schema_version: u32,
        upstream: &'a [&'a str],
        config: &'a T,
    }
    content_hash(&KeyInput {
        stage,
        schema_version: SCHEMA_VERSION,
        upstream,
        config,
    })
}

/// Runs every stage in dependency order, reusing cached stages, and writes
/// `report.json` into `<root>/experiments/<name>-<hash>`.
pub fn run_experiment(config: &ExperimentConfig, root: &Path) -> std::result::Result<ExperimentOutcome, StageError> {
    config.validate().stage("config")?;
    let cfg = config.effective();
    let condition = cfg.condition().stage("config")?;
    let spec = condition.spec();
    let config_hash = cfg.config_hash().stage("config")?;
    let mut stages = Vec::new();

    // corpus
    let corpus_key = key_of("corpus", &[], &cfg.corpus).stage("corpus")?;
    let st = run_stage(root, "corpus", &corpus_key, |dir| build_corpus(&cfg.corpus, dir).map(|_| ())).stage("corpus")?;
    let corpus_dir = st.dir.clone();
    stages.push(st);
    let manifest = CorpusManifest::load(&corpus_dir).stage("corpus")?;

    // codecs
    let codec_key = key_of("codec", &[&corpus_key], &cfg.codec).stage("codec")?;
    let st = run_stage(root, "codec", &codec_key, |dir| {
        let audio = codec_training_audio(&manifest, &corpus_dir)?;
        train_semantic(&audio, &cfg.codec.semantic)?.save(dir.join(SEMANTIC_FILE))?;
        train_acoustic_codec(&audio, &cfg.codec.acoustic)?.save(dir.join(ACOUSTIC_FILE))
    })
    .stage("codec")?;
    let codec_dir = st.dir.clone();
    stages.push(st);
    let (semantic, codec) = load_codecs(&codec_dir).stage("codec")?;

    // fine-stage model
    let stage3_key = key_of("stage3", &[&codec_key], &(&cfg.stage3_model, &cfg.stage3_training)).stage("stage3")?;
    let st = run_stage(root, "stage3", &stage3_key, |dir| {
        train_stage3_model(&manifest, &corpus_dir, &codec, &cfg.stage3_model, &cfg.stage3_training, dir)
    })
    .stage("stage3")?;
    let stage3_dir = st.dir.clone();
    stages.push(st);
    let stage3 = Model::load(stage3_dir.join(MODEL_FILE)).stage("stage3")?;

    // tokenized training data
    let tokens_key = key_of("tokens", &[&codec_key], &spec).stage("tokenize")?;
    let st = run_stage(root, "tokens", &tokens_key, |dir| {
        tokenize_training(&manifest, &corpus_dir, &cfg.condition, &spec, &semantic, &codec)?.save(&dir.join(TRAIN_TOKENS_DIR))
    })
    .stage("tokenize")?;
    let tokens_dir = st.dir.clone();
    stages.push(st);

    // main model
    let model_key = key_of(
        "model",
        &[&tokens_key, &stage3_key],
        &(&cfg.model, &cfg.training, &cfg.selection),
    )
    .stage("train")?;
    let st = run_stage(root, "model", &model_key, |dir| {
        let data = TokenizedDataset::load(&tokens_dir.join(TRAIN_TOKENS_DIR))?;
        train_main_model(
            &MainTraining {
                manifest: &manifest,
                corpus_dir: &corpus_dir,
                data: &data,
                spec,
                semantic: &semantic,
                codec: &codec,
                stage3: &stage3,
                model: &cfg.model,
                training: &cfg.training,
                selection: &cfg.selection,
            },
            dir,
        )
    })
    .stage("train")?;
    let model_dir = st.dir.clone();
    stages.push(st);
    let model = Model::load(model_dir.join(MODEL_FILE)).stage("train")?;
    let summary: TrainingSummary = read_json(&model_dir.join(TRAIN_LOG_FILE)).stage("train")?;

    let embedder = Embedder::default();

    // retrieval pool
    let pool_dir = if cfg.eval.baselines {
        let pool_key = key_of("pool", &[], &cfg.eval.pool).stage("pool")?;
        let st = run_stage(root, "pool", &pool_key, |dir| build_pool(&cfg.eval.pool, dir).map(|_| ())).stage("pool")?;
        let d = st.dir.clone();
        stages.push(st);
        Some(d)
    } else {
        None
    };

    // evaluation
    let eval_key = key_of("eval", &[&model_key], &cfg.eval).stage("evaluate")?;
    let st = run_stage(root, "eval", &eval_key, |dir| {
        let entries: Vec<&ManifestEntry> = manifest.eval().take(cfg.eval.max_clips.unwrap_or(usize::MAX)).collect();
        let clips = load_clips(entries.iter().copied(), &corpus_dir, None)?;
        let p = Pipeline {
            semantic: &semantic,
            codec: &codec,
            model: &model,
            stage3: &stage3,
            long_form: LongFormConfig::default(),
        };
        let eval = evaluate(&p, &embedder, &clips, spec, cfg.eval.temperature, cfg.eval.seed)?;
        let baselines = match &pool_dir {
            Some(d) => Some(score_baselines(&clips, &entries, &RetrievalPool::open(d)?, &embedder, cfg.eval.seed)?),
            None => None,
        };
        write_json(&dir.join(EVAL_FILE), &EvalStageOutput { eval, baselines })
    })
    .stage("evaluate")?;
    let eval_dir = st.dir.clone();
    stages.push(st);
    let out: EvalStageOutput = read_json(&eval_dir.join(EVAL_FILE)).stage("evaluate")?;

    // report
    let e = &out.eval;
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        version: VERSION.into(),
        config_hash: config_hash.clone(),
        name: cfg.name.clone(),
        condition: condition.to_string(),
        seed: cfg.training.seed,
        fad_i: e.fad_i,
        fad_s: e.fad_s,
        gap: e.gap,
        nll_i: e.nll_i,
        nll_s: e.nll_s,
        best_step: summary.best_step,
        steps: summary.steps,
        n_clips: e.n_clips,
        embedder_seed: e.embedder_seed,
        regularized: e.regularized,
        baselines: out.baselines,
        stage_keys: stages.iter().map(|s| (s.stage.clone(), s.key.clone())).collect(),
    };
    let dir = root.join("experiments").join(format!("{}-{}", cfg.name, &config_hash[..12]));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).stage("report")?;
    write_json(&dir.join(REPORT_FILE), &report).stage("report")?;
    write_json(&dir.join(CONFIG_FILE), &cfg).stage("report")?;
    Ok(ExperimentOutcome {
        dir,
        report,
        stages,
        artifacts: Artifacts {
            corpus: corpus_dir,
            codec: codec_dir,
            stage3: stage3_dir,
            tokens: tokens_dir,
            model: model_dir,
            pool: pool_dir,
            eval: eval_dir,
        },
    })
}

#[cfg(test)]
mod tests;
