//! End-to-end accompaniment generation: featurize the vocal, sample target
//! tokens, expand coarse codes to fine codes, decode and mix with the
//! original vocal.

mod probe;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mix, Waveform};
use crate::codecs::{combine_codes, frame_count, AcousticCodec, CodeKind, CodeSequence, SemanticQuantizer, COARSE_LEVELS};
use crate::error::{ensure, Error, Result};
use crate::model::{Model, ModelKind, StepRule};
use crate::tokens::{build_input, semantic_range, split_target, stage3_fine_codes, stage3_prompt, FeaturizationSpec, Schedule, TokenSequence};

pub use probe::{memorization_probe, scaled_k_grid, MemorizationReport, ProbeClip, ProbeResult, PROBE_K_GRID};

pub const DEFAULT_TEMPERATURE: f64 = 0.85;

/// Independent stream `stream` derived from `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sliding-window geometry for long inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongFormConfig {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for LongFormConfig {
    fn default() -> Self {
        Self {
            window_s: 10.0,
            hop_s: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub vocal: Waveform,
    pub featurization: FeaturizationSpec,
    pub temperature: f64,
    pub seed: u64,
    pub long_form: bool,
}

/// Tokens sampled for one window. `forced` lists target positions that were
/// fed from the previous window instead of sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTrace {
    pub start_s: f64,
    pub ids: Vec<u16>,
    pub forced: Vec<(usize, u16)>,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub instrumental: Waveform,
    /// Original vocal plus generated instrumental.
    pub mixture: Waveform,
    /// Sampled semantic codes (a by-product; not decoded).
    pub semantic: CodeSequence,
    pub coarse: CodeSequence,
    pub fine: CodeSequence,
    pub windows: Vec<WindowTrace>,
}

/// Trained components needed for generation.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub semantic: &'a SemanticQuantizer,
    pub codec: &'a AcousticCodec,
    pub model: &'a Model,
    pub stage3: &'a Model,
    pub long_form: LongFormConfig,
}

/// Semantic and acoustic frame counts for `len` samples.
pub fn code_counts(semantic: &SemanticQuantizer, codec: &AcousticCodec, len: usize) -> (usize, usize) {
    let sem_hop = (semantic.sample_rate / semantic.frame_rate) as usize;
    (frame_count(len, sem_hop), frame_count(len, codec.hop))
}

/// Number of codes in use per stream. Sampling is truncated to the first
/// `semantic` ids of the semantic subset and the first `acoustic` ids of
/// every acoustic subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveCodes {
    pub semantic: usize,
    pub acoustic: usize,
}

impl ActiveCodes {
    pub fn of(semantic: &SemanticQuantizer, codec: &AcousticCodec) -> Self {
        Self {
            semantic: semantic.k,
            acoustic: codec.codebook_size,
        }
    }

    /// `ranges` cut down to the codes in use.
    pub fn restrict(&self, ranges: &[Range<u32>]) -> Vec<Range<u32>> {
        ranges
            .iter()
            .map(|r| {
                let n = if *r == semantic_range() { self.semantic } else { self.acoustic };
                r.start..r.end.min(r.start + n as u32)
            })
            .collect()
    }
}

fn target_schedule(spec: &FeaturizationSpec, n_sem: usize, n_frames: usize) -> Schedule {
    Schedule::target(if spec.target_semantic { n_sem } else { 0 }, n_frames)
}

/// Samples a target sequence for `input`; positions with `Some` in `forced`
/// are fed verbatim.
pub fn sample_target(
    model: &Model,
    input: &[u16],
    schedule: &Schedule,
    forced: &[Option<u16>],
    active: ActiveCodes,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u16>> {
    ensure!(model.config().kind == ModelKind::EncoderDecoder, State, "expected an encoder-decoder model");
    ensure!(temperature > 0.0, Precondition, "temperature must be positive");
    model.check_lengths(input.len(), schedule.len())?;
    let ranges = active.restrict(&schedule.ranges());
    ensure!(ranges.iter().all(|r| r.end as usize <= model.config().vocab_size), State, "schedule exceeds the model vocabulary");
    let ids = model.net.generate(&model.params, input, &ranges, temperature, rng, |pos| {
        match forced.get(pos).copied().flatten() {
            Some(t) => StepRule::Force(t),
            None => StepRule::Sample,
        }
    });
    if let Some(p) = schedule.first_violation(&ids) {
        return Err(Error::State(format!("generated token at position {p} violates its subset")));
    }
    Ok(ids)
}

/// Fine codes for `coarse` from the decoder-only model, prompted with the
/// coarse codes.
pub fn sample_stage3(
    stage3: &Model,
    coarse: &CodeSequence,
    codebook_size: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CodeSequence> {
    ensure!(stage3.config().kind == ModelKind::DecoderOnly, State, "expected a decoder-only model");
    let prompt = stage3_prompt(coarse)?;
    let n_frames = coarse.len() / COARSE_LEVELS;
    let schedule = Schedule::stage3(n_frames);
    stage3.check_lengths(0, schedule.len())?;
    let active = ActiveCodes {
        semantic: codebook_size,
        acoustic: codebook_size,
    };
    let ranges = active.restrict(&schedule.ranges());
    ensure!(ranges.iter().all(|r| r.end as usize <= stage3.config().vocab_size), State, "schedule exceeds the model vocabulary");
    let ids = stage3.net.generate(&stage3.params, &[], &ranges, temperature, rng, |pos| {
        match prompt.get(pos) {
            Some(&t) => StepRule::Force(t),
            None => StepRule::Sample,
        }
    });
    if let Some(p) = schedule.first_violation(&ids) {
        return Err(Error::State(format!("generated token at position {p} violates its subset")));
    }
    Ok(stage3_fine_codes(&ids[prompt.len()..], coarse.source_duration_s))
}

impl Pipeline<'_> {
    pub fn active(&self) -> ActiveCodes {
        ActiveCodes::of(self.semantic, self.codec)
    }

    fn check(&self, req: &GenerationRequest) -> Result<()> {
        req.featurization.validate()?;
        ensure!(self.semantic.is_trained() && self.codec.is_trained(), State, "codecs are not trained");
        ensure!(
            req.vocal.sample_rate() == self.codec.sample_rate,
            Precondition,
            "vocal at {} Hz, pipeline at {} Hz",
            req.vocal.sample_rate(),
            self.codec.sample_rate
        );
        ensure!(req.temperature > 0.0, Precondition, "temperature must be positive");
        Ok(())
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<Generation> {
        self.check(req)?;
        if req.long_form {
            return self.generate_long(req);
        }
        self.generate_window(req)
    }

    fn generate_window(&self, req: &GenerationRequest) -> Result<Generation> {
        let spec = &req.featurization;
        let input = build_input(&req.vocal, spec, self.semantic, self.codec, derive_seed(req.seed, 0))?;
        let (n_sem, n_frames) = code_counts(self.semantic, self.codec, req.vocal.len());
        let schedule = target_schedule(spec, n_sem, n_frames);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(req.seed, 1));
        let ids = sample_target(self.model, &input.ids, &schedule, &[], self.active(), req.temperature, &mut rng)?;
        let (semantic, coarse) = self.split(ids.clone(), schedule, req.vocal.duration_s())?;
        let trace = WindowTrace {
            start_s: 0.0,
            ids,
            forced: Vec::new(),
        };
        self.finish(req, semantic, coarse, vec![trace], &mut rng)
    }

    fn split(&self, ids: Vec<u16>, schedule: Schedule, duration_s: f64) -> Result<(CodeSequence, CodeSequence)> {
        let (s, c) = split_target(&TokenSequence::new(ids, schedule)?)?;
        Ok((
            CodeSequence::new(s.codes, CodeKind::Semantic, duration_s),
            CodeSequence::new(c.codes, CodeKind::CoarseAcoustic, duration_s),
        ))
    }

    fn finish(
        &self,
        req: &GenerationRequest,
        semantic: CodeSequence,
        coarse: CodeSequence,
        windows: Vec<WindowTrace>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Generation> {
        let hop_frames = if req.long_form {
            ((self.long_form.hop_s * crate::codecs::ACOUSTIC_FRAME_RATE).round() as usize).max(1)
        } else {
            coarse.len() / COARSE_LEVELS
        };
        // coarse to fine one chunk at a time
        let chunk = hop_frames * COARSE_LEVELS;
        let mut fine_codes = Vec::new();
        for c in coarse.codes.chunks(chunk.max(1)) {
            let part = CodeSequence::new(c.to_vec(), CodeKind::CoarseAcoustic, 0.0);
            fine_codes.extend(sample_stage3(self.stage3, &part, self.codec.codebook_size, req.temperature, rng)?.codes);
        }
        let fine = CodeSequence::new(fine_codes, CodeKind::FineAcoustic, coarse.source_duration_s);
        let m = combine_codes(&coarse, &fine)?;
        let decoded = self.codec.decode_matrix(&m, crate::codecs::N_LEVELS, m.n_frames * self.codec.hop)?;
        let instrumental = decoded.slice_padded(0, req.vocal.len());
        let mixture = mix(&req.vocal, &instrumental)?;
        Ok(Generation {
            instrumental,
            mixture,
            semantic,
            coarse,
            fine,
            windows,
        })
    }

    /// Windows of `window_s` every `hop_s = window_s / 2`: the first window
    /// is sampled freely; each later window re-feeds the codes of its first
    /// half from the previous window and samples the rest. Input is padded
    /// to a whole number of hops and the output trimmed back.
    pub fn generate_long(&self, req: &GenerationRequest) -> Result<Generation> {
        self.check(req)?;
        let lf = self.long_form;
        let sr = req.vocal.sample_rate() as f64;
        let window = (lf.window_s * sr).round() as usize;
        let hop = (lf.hop_s * sr).round() as usize;
        let sem_hop = (self.semantic.sample_rate / self.semantic.frame_rate) as usize;
        ensure!(hop > 0 && window == 2 * hop, Config, "long-form windows must overlap by exactly half");
        ensure!(
            hop % sem_hop == 0 && hop % self.codec.hop == 0,
            Config,
            "long-form window and hop must align with the code frame rates"
        );
        ensure!(
            req.vocal.len() >= window,
            Precondition,
            "long-form input of {:.2} s is shorter than the {:.2} s window",
            req.vocal.duration_s(),
            lf.window_s
        );
        let padded_len = req.vocal.len().div_ceil(hop) * hop;
        if padded_len == window {
            return self.generate_window(&GenerationRequest {
                vocal: req.vocal.slice_padded(0, window),
                long_form: false,
                ..req.clone()
            })
            .map(|mut g| {
                g.instrumental = g.instrumental.slice_padded(0, req.vocal.len());
                g.mixture = g.mixture.slice_padded(0, req.vocal.len());
                g
            });
        }
        let vocal = req.vocal.slice_padded(0, padded_len);
        let spec = &req.featurization;
        let (n_sem_w, n_frames_w) = (window / sem_hop, window / self.codec.hop);
        let (n_sem_h, n_frames_h) = (hop / sem_hop, hop / self.codec.hop);
        let schedule = target_schedule(spec, n_sem_w, n_frames_w);
        let sem_w = if spec.target_semantic { n_sem_w } else { 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(req.seed, 1));
        let (mut sem, mut coarse): (Vec<u16>, Vec<u16>) = (Vec::new(), Vec::new());
        let mut windows = Vec::new();
        let mut start = 0;
        let mut step = 0u64;
        while start + window <= padded_len {
            let input = build_input(&vocal.slice_padded(start, start + window), spec, self.semantic, self.codec, derive_seed(req.seed, if step == 0 { 0 } else { 1 + step }))?;
            let mut forced = vec![None; schedule.len()];
            let mut forced_list = Vec::new();
            if start > 0 {
                let sem_from = start / sem_hop;
                let coarse_from = start / self.codec.hop * COARSE_LEVELS;
                if spec.target_semantic {
                    for j in 0..n_sem_h {
                        forced[j] = Some(sem[sem_from + j]);
                    }
                }
                for j in 0..n_frames_h * COARSE_LEVELS {
                    forced[sem_w + j] = Some(schedule_id(&schedule, sem_w + j, coarse[coarse_from + j])?);
                }
                forced_list = forced.iter().enumerate().filter_map(|(p, f)| f.map(|t| (p, t))).collect();
            }
            let ids = sample_target(self.model, &input.ids, &schedule, &forced, self.active(), req.temperature, &mut rng)?;
            let (ws, wc) = self.split(ids.clone(), schedule.clone(), lf.window_s)?;
            let (keep_sem, keep_coarse) = if start == 0 { (0, 0) } else { (n_sem_h, n_frames_h * COARSE_LEVELS) };
            if spec.target_semantic {
                sem.extend_from_slice(&ws.codes[keep_sem..]);
            }
            coarse.extend_from_slice(&wc.codes[keep_coarse..]);
            windows.push(WindowTrace {
                start_s: start as f64 / sr,
                ids,
                forced: forced_list,
            });
            start += hop;
            step += 1;
        }
        let duration = padded_len as f64 / sr;
        let semantic = CodeSequence::new(sem, CodeKind::Semantic, duration);
        let coarse = CodeSequence::new(coarse, CodeKind::CoarseAcoustic, duration);
        self.finish(req, semantic, coarse, windows, &mut rng)
    }
}

/// Token id of code `code` at target position `pos`.
fn schedule_id(schedule: &Schedule, pos: usize, code: u16) -> Result<u16> {
    Ok((schedule.allowed(pos)?.start + code as u32) as u16)
}
