//! Synthetic paired corpus: clip rendering, the artifact-injecting separator
//! stand-in, training-data filtering and the on-disk manifest.

mod manifest;
mod separate;
mod synth;

use serde::{Deserialize, Serialize};

use crate::audio::{peak_rms_db, Waveform, PEAK_RMS_WINDOW_S};
use crate::error::Result;

pub use manifest::{build_corpus, CorpusConfig, CorpusManifest, ManifestEntry, Split, StemKind};
pub use separate::{derive_instrumental, separate_vocals, wiener_masked_vocal};
pub use synth::{
    generate_clip, key_is_minor, key_scale, key_tonic, midi_to_hz, ClipSpec, MAJOR_SCALE,
    MINOR_SCALE, STEM_GRID,
};

/// Instrumentals quieter than this (peak RMS, dBFS) are dropped from training.
pub const SILENT_INSTRUMENTAL_DB: f64 = -25.0;
/// Vocals this much louder than the instrumental are dropped from training.
pub const VOCAL_EXCESS_DB: f64 = 5.0;
/// Evaluation clips need vocals strictly louder than this (peak RMS, dBFS).
pub const VOCAL_PRESENCE_DB: f64 = -25.0;
/// Default bleed of the separation stand-in, relative to the instrumental.
pub const DEFAULT_LEAKAGE_DB: f64 = -45.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocalKind {
    Isolated,
    Separated,
}

impl std::fmt::Display for VocalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VocalKind::Isolated => "isolated",
            VocalKind::Separated => "separated",
        })
    }
}

impl std::str::FromStr for VocalKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolated" => Ok(VocalKind::Isolated),
            "separated" => Ok(VocalKind::Separated),
            other => Err(crate::Error::Config(format!("unknown vocal kind {other:?}"))),
        }
    }
}

/// Aligned vocal / instrumental / mixture stems for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPair {
    pub clip_id: String,
    pub vocal: Waveform,
    pub instrumental: Waveform,
    pub mixture: Waveform,
    pub vocal_kind: VocalKind,
    pub tempo_bpm: f64,
    pub key_index: u8,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    None,
    SilentInstrumental,
    VocalsTooLoud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterDecision {
    pub keep: bool,
    pub reason: FilterReason,
}

/// The training-data filter as a function of the two peak RMS levels.
pub fn filter_decision(vocal_peak_db: f64, instrumental_peak_db: f64) -> FilterDecision {
    let reason = if instrumental_peak_db < SILENT_INSTRUMENTAL_DB {
        FilterReason::SilentInstrumental
    } else if vocal_peak_db >= instrumental_peak_db + VOCAL_EXCESS_DB {
        FilterReason::VocalsTooLoud
    } else {
        FilterReason::None
    };
    FilterDecision {
        keep: reason == FilterReason::None,
        reason,
    }
}

pub fn filter_clip(vocal: &Waveform, instrumental: &Waveform) -> Result<FilterDecision> {
    Ok(filter_decision(
        peak_rms_db(vocal, PEAK_RMS_WINDOW_S)?,
        peak_rms_db(instrumental, PEAK_RMS_WINDOW_S)?,
    ))
}

pub fn vocal_presence(vocal_peak_db: f64) -> bool {
    vocal_peak_db > VOCAL_PRESENCE_DB
}

pub fn vocals_present(vocal: &Waveform) -> Result<bool> {
    Ok(vocal_presence(peak_rms_db(vocal, PEAK_RMS_WINDOW_S)?))
}

/// Keeps clips whose isolated vocal peak RMS is strictly above -25 dBFS.
pub fn select_eval_clips(pairs: Vec<ClipPair>) -> Result<Vec<ClipPair>> {
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        if vocals_present(&p.vocal)? {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
