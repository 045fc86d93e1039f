//! Token vocabulary layout, position-dependent subset schedules, input
//! featurization variants and target construction.

mod dataset;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{add_noise, Waveform};
use crate::codecs::{
    AcousticCodec, CodeKind, CodeSequence, SemanticQuantizer, COARSE_LEVELS, FINE_LEVELS, N_LEVELS,
};
use crate::error::{ensure, Error, Result};

pub use dataset::{TokenizedDataset, TokenizedExample, TOKEN_INDEX_FILE, TOKEN_DATA_FILE};

/// Size of the semantic range and of every acoustic level's range.
pub const SUBSET_SIZE: u32 = 1024;
pub const SEMANTIC_SIZE: u32 = SUBSET_SIZE;
pub const SOS: u32 = SEMANTIC_SIZE + COARSE_LEVELS as u32 * SUBSET_SIZE;
pub const PAD: u32 = SOS + 1;
pub const VOCAB_SIZE: usize = PAD as usize + 1;

/// Fine-stage ids: level `l` (0-based, all 12 levels) code `c` maps to
/// `1024 l + c`.
pub const STAGE3_SOS: u32 = N_LEVELS as u32 * SUBSET_SIZE;
pub const STAGE3_PAD: u32 = STAGE3_SOS + 1;
pub const STAGE3_VOCAB_SIZE: usize = STAGE3_PAD as usize + 1;

/// Noise amplitude of the Noisy featurizations.
pub const NOISY_SIGMA: f64 = 0.01;

/// Id range of coarse level `level` (0-based) in the main vocabulary.
pub fn coarse_range(level: usize) -> Range<u32> {
    let start = SEMANTIC_SIZE + level as u32 * SUBSET_SIZE;
    start..start + SUBSET_SIZE
}

pub fn semantic_range() -> Range<u32> {
    0..SEMANTIC_SIZE
}

/// Id range of level `level` (0-based) in the fine-stage vocabulary.
pub fn stage3_range(level: usize) -> Range<u32> {
    let start = level as u32 * SUBSET_SIZE;
    start..start + SUBSET_SIZE
}

/// A run of positions whose allowed subsets cycle through `subsets`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub len: usize,
    pub subsets: Vec<Range<u32>>,
}

/// Allowed id range for every position of a sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub runs: Vec<Run>,
}

impl Schedule {
    /// `n_semantic` semantic positions followed by `n_frames` coarse frames.
    pub fn target(n_semantic: usize, n_frames: usize) -> Self {
        let mut runs = Vec::new();
        if n_semantic > 0 {
            runs.push(Run {
                len: n_semantic,
                subsets: vec![semantic_range()],
            });
        }
        if n_frames > 0 {
            runs.push(Run {
                len: n_frames * COARSE_LEVELS,
                subsets: (0..COARSE_LEVELS).map(coarse_range).collect(),
            });
        }
        Self { runs }
    }

    /// Coarse then fine frames in the fine-stage vocabulary.
    pub fn stage3(n_frames: usize) -> Self {
        if n_frames == 0 {
            return Self::default();
        }
        Self {
            runs: vec![
                Run {
                    len: n_frames * COARSE_LEVELS,
                    subsets: (0..COARSE_LEVELS).map(stage3_range).collect(),
                },
                Run {
                    len: n_frames * FINE_LEVELS,
                    subsets: (COARSE_LEVELS..N_LEVELS).map(stage3_range).collect(),
                },
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|r| r.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The allowed id range at `position`.
    pub fn allowed(&self, position: usize) -> Result<Range<u32>> {
        let mut p = position;
        for run in &self.runs {
            if p < run.len {
                return Ok(run.subsets[p % run.subsets.len()].clone());
            }
            p -= run.len;
        }
        Err(Error::Precondition(format!(
            "position {position} outside a schedule of length {}",
            self.len()
        )))
    }

    /// Per-position ranges, materialized.
    pub fn ranges(&self) -> Vec<Range<u32>> {
        self.runs
            .iter()
            .flat_map(|r| (0..r.len).map(move |p| r.subsets[p % r.subsets.len()].clone()))
            .collect()
    }

    /// First position whose id is outside its subset, if any.
    pub fn first_violation(&self, ids: &[u16]) -> Option<usize> {
        if ids.len() != self.len() {
            return Some(ids.len().min(self.len()));
        }
        self.ranges()
            .iter()
            .zip(ids)
            .position(|(r, &id)| !r.contains(&(id as u32)))
    }
}

/// The allowed id set at `position`.
pub fn subset_mask(position: usize, schedule: &Schedule) -> Result<Range<u32>> {
    schedule.allowed(position)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u16>,
    pub schedule: Schedule,
}

impl TokenSequence {
    pub fn new(ids: Vec<u16>, schedule: Schedule) -> Result<Self> {
        if let Some(p) = schedule.first_violation(&ids) {
            return Err(Error::Shape(format!(
                "token sequence of length {} violates its schedule at position {p}",
                ids.len()
            )));
        }
        Ok(Self { ids, schedule })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn same_duration(a: &CodeSequence, b: &CodeSequence) -> Result<()> {
    ensure!(
        (a.source_duration_s - b.source_duration_s).abs() < 1e-9,
        Shape,
        "code streams cover {} s and {} s",
        a.source_duration_s,
        b.source_duration_s
    );
    Ok(())
}

fn coarse_ids(coarse: &CodeSequence) -> Result<Vec<u16>> {
    ensure!(coarse.kind == CodeKind::CoarseAcoustic, Shape, "expected coarse codes, got {:?}", coarse.kind);
    ensure!(coarse.len() % COARSE_LEVELS == 0, Shape, "partial coarse frame");
    coarse
        .codes
        .iter()
        .enumerate()
        .map(|(p, &c)| {
            ensure!((c as u32) < SUBSET_SIZE, Shape, "coarse code {c} out of range");
            Ok((coarse_range(p % COARSE_LEVELS).start + c as u32) as u16)
        })
        .collect()
}

fn semantic_ids(sem: &CodeSequence) -> Result<Vec<u16>> {
    ensure!(sem.kind == CodeKind::Semantic, Shape, "expected semantic codes, got {:?}", sem.kind);
    ensure!(
        sem.codes.iter().all(|&c| (c as u32) < SEMANTIC_SIZE),
        Shape,
        "semantic code out of range"
    );
    Ok(sem.codes.clone())
}

/// `[semantic][coarse]` with coarse codes offset into their level's range.
pub fn build_target(sem: &CodeSequence, coarse: &CodeSequence) -> Result<TokenSequence> {
    same_duration(sem, coarse)?;
    let mut ids = semantic_ids(sem)?;
    ids.extend(coarse_ids(coarse)?);
    TokenSequence::new(ids, Schedule::target(sem.len(), coarse.len() / COARSE_LEVELS))
}

/// Coarse-only target (for featurizations that drop semantic targets).
pub fn build_coarse_target(coarse: &CodeSequence) -> Result<TokenSequence> {
    let ids = coarse_ids(coarse)?;
    TokenSequence::new(ids, Schedule::target(0, coarse.len() / COARSE_LEVELS))
}

/// Inverse of [`build_target`]: `(semantic, coarse)` code streams. The
/// semantic stream is empty for coarse-only targets.
pub fn split_target(t: &TokenSequence) -> Result<(CodeSequence, CodeSequence)> {
    if let Some(p) = t.schedule.first_violation(&t.ids) {
        return Err(Error::Shape(format!("schedule violation at position {p}")));
    }
    let n_sem = t
        .schedule
        .runs
        .iter()
        .take_while(|r| r.subsets == vec![semantic_range()])
        .map(|r| r.len)
        .sum::<usize>();
    let sem: Vec<u16> = t.ids[..n_sem].to_vec();
    let coarse: Vec<u16> = t.ids[n_sem..]
        .iter()
        .map(|&id| ((id as u32 - SEMANTIC_SIZE) % SUBSET_SIZE) as u16)
        .collect();
    ensure!(coarse.len() % COARSE_LEVELS == 0, Shape, "partial coarse frame in target");
    let frames = coarse.len() / COARSE_LEVELS;
    let duration = if frames > 0 {
        frames as f64 / crate::codecs::ACOUSTIC_FRAME_RATE
    } else {
        n_sem as f64 / crate::codecs::SEMANTIC_RATE
    };
    Ok((
        CodeSequence::new(sem, CodeKind::Semantic, duration),
        CodeSequence::new(coarse, CodeKind::CoarseAcoustic, duration),
    ))
}

/// `[coarse][fine]` in the fine-stage vocabulary.
pub fn build_stage3(coarse: &CodeSequence, fine: &CodeSequence) -> Result<TokenSequence> {
    let m = crate::codecs::combine_codes(coarse, fine)?;
    let mut ids = Vec::with_capacity(m.data.len());
    for f in m.data.chunks_exact(N_LEVELS) {
        for (l, &c) in f[..COARSE_LEVELS].iter().enumerate() {
            ids.push((stage3_range(l).start + c as u32) as u16);
        }
    }
    for f in m.data.chunks_exact(N_LEVELS) {
        for (l, &c) in f.iter().enumerate().skip(COARSE_LEVELS) {
            ensure!((c as u32) < SUBSET_SIZE, Shape, "code {c} out of range");
            ids.push((stage3_range(l).start + c as u32) as u16);
        }
    }
    TokenSequence::new(ids, Schedule::stage3(m.n_frames))
}

/// Fine-stage prompt: coarse codes in the fine-stage vocabulary.
pub fn stage3_prompt(coarse: &CodeSequence) -> Result<Vec<u16>> {
    ensure!(coarse.kind == CodeKind::CoarseAcoustic && coarse.len() % COARSE_LEVELS == 0, Shape, "bad coarse stream");
    Ok(coarse
        .codes
        .iter()
        .enumerate()
        .map(|(p, &c)| (stage3_range(p % COARSE_LEVELS).start + c as u32) as u16)
        .collect())
}

/// Fine codes from fine-stage ids of the fine positions.
pub fn stage3_fine_codes(ids: &[u16], source_duration_s: f64) -> CodeSequence {
    CodeSequence::new(
        ids.iter().map(|&id| (id as u32 % SUBSET_SIZE) as u16).collect(),
        CodeKind::FineAcoustic,
        source_duration_s,
    )
}

/// Input streams, target streams and noise level of one featurization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturizationSpec {
    pub input_semantic: bool,
    pub input_acoustic: bool,
    pub target_semantic: bool,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "sa-sa")]
    SaSa,
    #[serde(rename = "s-sa")]
    SSa,
    #[serde(rename = "a-sa")]
    ASa,
    #[serde(rename = "sa-a")]
    SaA,
    #[serde(rename = "a-a")]
    AA,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::SaSa, Variant::SSa, Variant::ASa, Variant::SaA, Variant::AA];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SaSa => "sa-sa",
            Variant::SSa => "s-sa",
            Variant::ASa => "a-sa",
            Variant::SaA => "sa-a",
            Variant::AA => "a-a",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown featurization {s:?}")))
    }
}

/// A featurization condition such as `noisy/s-sa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub noisy: bool,
    pub variant: Variant,
}

impl Condition {
    pub fn spec(self) -> FeaturizationSpec {
        let (input_semantic, input_acoustic, target_semantic) = match self.variant {
            Variant::SaSa => (true, true, true),
            Variant::SSa => (true, false, true),
            Variant::ASa => (false, true, true),
            Variant::SaA => (true, true, false),
            Variant::AA => (false, true, false),
        };
        FeaturizationSpec {
            input_semantic,
            input_acoustic,
            target_semantic,
            noise_sigma: if self.noisy { NOISY_SIGMA } else { 0.0 },
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", if self.noisy { "noisy" } else { "clean" }, self.variant.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (noise, variant) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("condition {s:?} is not of the form clean|noisy/<variant>")))?;
        let noisy = match noise.to_ascii_lowercase().as_str() {
            "clean" => false,
            "noisy" => true,
            other => return Err(Error::Config(format!("unknown noise setting {other:?}"))),
        };
        Ok(Condition {
            noisy,
            variant: variant.parse()?,
        })
    }
}

impl FeaturizationSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.input_semantic || self.input_acoustic,
            Config,
            "a featurization needs at least one input stream"
        );
        ensure!(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            Config,
            "noise sigma must be finite and non-negative"
        );
        Ok(())
    }

    /// Builds the target for this featurization from instrumental codes.
    pub fn target(&self, sem: &CodeSequence, coarse: &CodeSequence) -> Result<TokenSequence> {
        if self.target_semantic {
            build_target(sem, coarse)
        } else {
            build_coarse_target(coarse)
        }
    }
}

/// Encoder input: noise first, then the enabled code streams of the noisy
/// waveform in `[semantic][coarse]` order.
pub fn build_input(
    vocal: &Waveform,
    spec: &FeaturizationSpec,
    semantic: &SemanticQuantizer,
    acoustic: &AcousticCodec,
    seed: u64,
) -> Result<TokenSequence> {
    spec.validate()?;
    let x = add_noise(vocal, spec.noise_sigma, seed)?;
    let (sem, coarse) = (
        if spec.input_semantic { Some(semantic.encode(&x)?) } else { None },
        if spec.input_acoustic { Some(acoustic.encode(&x)?.0) } else { None },
    );
    match (sem, coarse) {
        (Some(s), Some(c)) => build_target(&s, &c),
        (Some(s), None) => TokenSequence::new(semantic_ids(&s)?, Schedule::target(s.len(), 0)),
        (None, Some(c)) => build_coarse_target(&c),
        (None, None) => unreachable!("validated above"),
    }
}
