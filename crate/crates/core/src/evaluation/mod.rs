//! Fréchet audio distance over clip embeddings, the isolated/separated
//! generalization gap, and teacher-forced NLL on coarse acoustic codes.

mod embed;
mod frechet;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{mix, Waveform};
use crate::codecs::{AcousticCodec, SemanticQuantizer};
use crate::corpus::{ManifestEntry, StemKind, VocalKind};
use crate::error::{ensure, Result};
use crate::inference::{derive_seed, GenerationRequest, Pipeline};
use crate::model::{LossMode, Model, TrainExample};
use crate::tokens::{build_input, FeaturizationSpec};

pub use embed::{Embedder, EMBEDDER_SEED, EMBEDDING_DIM};
pub use frechet::{frechet_distance, sqrt_psd, GaussianStats, COV_RIDGE};

/// Parallel stems of one evaluation clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalClip {
    pub clip_id: String,
    pub isolated_vocal: Waveform,
    pub separated_vocal: Waveform,
    pub instrumental: Waveform,
    pub mixture: Waveform,
}

impl EvalClip {
    pub fn load(entry: &ManifestEntry, corpus_dir: &Path) -> Result<Self> {
        Ok(Self {
            clip_id: entry.clip_id.clone(),
            isolated_vocal: entry.load_stem(corpus_dir, StemKind::Vocal)?,
            separated_vocal: entry.load_stem(corpus_dir, StemKind::VocalSep)?,
            instrumental: entry.load_stem(corpus_dir, StemKind::Instr)?,
            mixture: entry.load_stem(corpus_dir, StemKind::Mix)?,
        })
    }

    pub fn vocal(&self, kind: VocalKind) -> &Waveform {
        match kind {
            VocalKind::Isolated => &self.isolated_vocal,
            VocalKind::Separated => &self.separated_vocal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadResult {
    pub fad: f64,
    pub n_clips: usize,
    pub regularized: bool,
}

/// Stats of the ground-truth mixtures.
pub fn reference_stats(embedder: &Embedder, clips: &[EvalClip]) -> Result<GaussianStats> {
    let mixes: Vec<Waveform> = clips.iter().map(|c| c.mixture.clone()).collect();
    GaussianStats::from_samples(&embedder.embed_all(&mixes)?)
}

/// FAD of isolated vocals mixed with `instrumentals` against the
/// ground-truth mixtures.
pub fn fad_of_instrumentals(embedder: &Embedder, clips: &[EvalClip], instrumentals: &[Waveform]) -> Result<FadResult> {
    ensure!(!clips.is_empty(), Precondition, "empty evaluation set");
    ensure!(clips.len() == instrumentals.len(), Shape, "one instrumental per clip expected");
    let reference = reference_stats(embedder, clips)?;
    let mixes = clips
        .iter()
        .zip(instrumentals)
        .map(|(c, i)| mix(&c.isolated_vocal, i))
        .collect::<Result<Vec<_>>>()?;
    let candidate = GaussianStats::from_samples(&embedder.embed_all(&mixes)?)?;
    Ok(FadResult {
        fad: frechet_distance(&reference, &candidate)?,
        n_clips: clips.len(),
        regularized: reference.regularized || candidate.regularized,
    })
}

/// Instrumentals generated from the `kind` vocal of every clip; clip `i`
/// uses seed `derive_seed(seed, i)`.
pub fn generate_instrumentals(
    pipeline: &Pipeline,
    clips: &[EvalClip],
    kind: VocalKind,
    featurization: FeaturizationSpec,
    temperature: f64,
    seed: u64,
) -> Result<Vec<Waveform>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let req = GenerationRequest {
                vocal: c.vocal(kind).clone(),
                featurization,
                temperature,
                seed: derive_seed(seed, i as u64),
                long_form: false,
            };
            Ok(pipeline.generate(&req)?.instrumental)
        })
        .collect()
}

/// FAD of generated accompaniment. Instrumentals are generated from the
/// `kind` vocal; candidates always mix them with the isolated vocal.
pub fn eval_fad(
    pipeline: &Pipeline,
    embedder: &Embedder,
    clips: &[EvalClip],
    kind: VocalKind,
    featurization: FeaturizationSpec,
    temperature: f64,
    seed: u64,
) -> Result<FadResult> {
    ensure!(!clips.is_empty(), Precondition, "empty evaluation set");
    let instrumentals = generate_instrumentals(pipeline, clips, kind, featurization, temperature, seed)?;
    fad_of_instrumentals(embedder, clips, &instrumentals)
}

/// Teacher-forcing examples: input from the `kind` vocal, target from the
/// isolated instrumental, loss restricted to the coarse acoustic positions.
pub fn nll_examples(
    clips: &[EvalClip],
    kind: VocalKind,
    featurization: &FeaturizationSpec,
    semantic: &SemanticQuantizer,
    codec: &AcousticCodec,
    seed: u64,
) -> Result<Vec<TrainExample>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let input = build_input(c.vocal(kind), featurization, semantic, codec, derive_seed(seed, i as u64))?;
            let sem = semantic.encode(&c.instrumental)?;
            let (coarse, _) = codec.encode(&c.instrumental)?;
            let target = featurization.target(&sem, &coarse)?;
            let n_sem = if featurization.target_semantic { sem.len() } else { 0 };
            Ok(TrainExample {
                input: input.ids,
                ranges: target.schedule.ranges(),
                target: target.ids,
                loss_from: n_sem,
            })
        })
        .collect()
}

/// Mean NLL (nats per token) over the loss positions of all `examples`,
/// with the softmax restricted to each position's subset.
pub fn coarse_nll(model: &Model, examples: &[TrainExample]) -> Result<f64> {
    ensure!(!examples.is_empty(), Precondition, "no evaluation examples");
    let (mut total, mut count) = (0.0, 0usize);
    for ex in examples {
        let nll = model.nll_per_position(&ex.as_example(), LossMode::Masked)?;
        total += nll[ex.loss_from..].iter().sum::<f64>();
        count += nll.len() - ex.loss_from;
    }
    ensure!(count > 0, Precondition, "no coarse positions");
    Ok(total / count as f64)
}

/// Mean NLL of the semantic segment (if any), the coarse segment and the
/// whole target of one example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentNll {
    pub semantic: Option<f64>,
    pub coarse: f64,
    pub mean: f64,
}

pub fn segment_nll(model: &Model, ex: &TrainExample, mode: LossMode) -> Result<SegmentNll> {
    let full = TrainExample { loss_from: 0, ..ex.clone() };
    let nll = model.nll_per_position(&full.as_example(), mode)?;
    ensure!(!nll.is_empty() && ex.loss_from < nll.len(), Precondition, "no coarse positions");
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(SegmentNll {
        semantic: (ex.loss_from > 0).then(|| avg(&nll[..ex.loss_from])),
        coarse: avg(&nll[ex.loss_from..]),
        mean: avg(&nll),
    })
}

/// FAD and NLL on isolated and separated inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fad_i: f64,
    pub fad_s: f64,
    /// `fad_i - fad_s`.
    pub gap: f64,
    pub nll_i: f64,
    pub nll_s: f64,
    pub n_clips: usize,
    pub embedder_seed: u64,
    pub regularized: bool,
}

/// The full evaluation protocol for one model.
pub fn evaluate(
    pipeline: &Pipeline,
    embedder: &Embedder,
    clips: &[EvalClip],
    featurization: FeaturizationSpec,
    temperature: f64,
    seed: u64,
) -> Result<EvalReport> {
    let fi = eval_fad(pipeline, embedder, clips, VocalKind::Isolated, featurization, temperature, seed)?;
    let fs = eval_fad(pipeline, embedder, clips, VocalKind::Separated, featurization, temperature, seed)?;
    let nll = |kind| {
        let ex = nll_examples(clips, kind, &featurization, pipeline.semantic, pipeline.codec, seed)?;
        coarse_nll(pipeline.model, &ex)
    };
    Ok(EvalReport {
        fad_i: fi.fad,
        fad_s: fs.fad,
        gap: fi.fad - fs.fad,
        nll_i: nll(VocalKind::Isolated)?,
        nll_s: nll(VocalKind::Separated)?,
        n_clips: clips.len(),
        embedder_seed: embedder.seed,
        regularized: fi.regularized || fs.regularized,
    })
}
