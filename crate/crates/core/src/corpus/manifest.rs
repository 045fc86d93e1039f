use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    derive_instrumental, filter_decision, generate_clip, separate_vocals, vocals_present, ClipSpec,
    FilterReason, VocalKind, DEFAULT_LEAKAGE_DB,
};
use crate::audio::{load_wav, peak_rms_db, save_wav, Waveform, DEFAULT_SAMPLE_RATE, PEAK_RMS_WINDOW_S};
use crate::error::{ensure, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_eval: usize,
    /// Held-out clips for checkpoint selection, rendered like evaluation clips.
    pub n_dev: usize,
    pub seed: u64,
    pub leakage_db: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub tempo_min: f64,
    pub tempo_max: f64,
    /// Probability that a training clip is rendered with a near-silent
    /// instrumental.
    pub quiet_instrumental_fraction: f64,
    /// Apply the training-data filter. `false` reproduces the unfiltered
    /// ablation: no entry is marked filtered.
    pub apply_filter: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_eval: 40,
            n_dev: 16,
            seed: 0,
            leakage_db: DEFAULT_LEAKAGE_DB,
            duration_s: 10.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            tempo_min: 70.0,
            tempo_max: 160.0,
            quiet_instrumental_fraction: 0.0,
            apply_filter: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
    Dev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    Vocal,
    Instr,
    Mix,
    VocalSep,
    InstrSep,
}

impl StemKind {
    fn suffix(self) -> &'static str {
        match self {
            StemKind::Vocal => "vocal",
            StemKind::Instr => "instr",
            StemKind::Mix => "mix",
            StemKind::VocalSep => "vocal_sep",
            StemKind::InstrSep => "instr_sep",
        }
    }

    pub fn file_name(self, clip_id: &str) -> String {
        format!("{clip_id}.{}.wav", self.suffix())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub split: Split,
    pub vocal_kind: VocalKind,
    pub stems: BTreeMap<StemKind, String>,
    pub tempo_bpm: f64,
    pub key_index: u8,
    pub duration_s: f64,
    pub seed: u64,
    /// Peak RMS (dBFS) of the vocal stem of `vocal_kind`.
    pub vocal_peak_db: f64,
    /// Peak RMS (dBFS) of the matching instrumental stem.
    pub instrumental_peak_db: f64,
    pub mixture_peak_db: f64,
    pub filtered: bool,
    pub filter_reason: FilterReason,
}

impl ManifestEntry {
    pub fn stem_path(&self, corpus_dir: &Path, kind: StemKind) -> Result<PathBuf> {
        self.stems
            .get(&kind)
            .map(|f| corpus_dir.join(f))
            .ok_or_else(|| Error::State(format!("{} has no {kind:?} stem", self.clip_id)))
    }

    pub fn load_stem(&self, corpus_dir: &Path, kind: StemKind) -> Result<Waveform> {
        load_wav(self.stem_path(corpus_dir, kind)?)
    }

    /// Stem that plays the role of the vocal input for this entry's kind.
    pub fn vocal_stem(&self) -> StemKind {
        match self.vocal_kind {
            VocalKind::Isolated => StemKind::Vocal,
            VocalKind::Separated => StemKind::VocalSep,
        }
    }

    pub fn instrumental_stem(&self) -> StemKind {
        match self.vocal_kind {
            VocalKind::Isolated => StemKind::Instr,
            VocalKind::Separated => StemKind::InstrSep,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn training(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == Split::Train && !e.filtered)
    }

    pub fn eval(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Eval)
    }

    pub fn dev(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Dev)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_jsonl()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(Self { entries })
    }
}

fn draw_spec(rng: &mut ChaCha8Rng, config: &CorpusConfig) -> ClipSpec {
    let tempo = if config.tempo_max > config.tempo_min {
        rng.gen_range(config.tempo_min..=config.tempo_max).round()
    } else {
        config.tempo_min
    };
    let key = rng.gen_range(0..24u8);
    let seed = rng.gen::<u64>();
    ClipSpec::new(tempo, key, config.duration_s, seed)
}

fn peak(w: &Waveform) -> Result<f64> {
    peak_rms_db(w, PEAK_RMS_WINDOW_S)
}

fn write_stem(dir: &Path, clip_id: &str, kind: StemKind, w: &Waveform, stems: &mut BTreeMap<StemKind, String>) -> Result<()> {
    let name = kind.file_name(clip_id);
    save_wav(w, dir.join(&name))?;
    stems.insert(kind, name);
    Ok(())
}

/// Draws held-out clips until `n` pass the vocal-presence rule. They carry
/// the isolated stems plus the separated pair for the same material.
fn render_held_out(
    config: &CorpusConfig,
    rng: &mut ChaCha8Rng,
    split: Split,
    prefix: &str,
    n: usize,
    out_dir: &Path,
    entries: &mut Vec<ManifestEntry>,
) -> Result<()> {
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < n {
        attempts += 1;
        ensure!(
            attempts <= 10 * n + 10,
            Training,
            "could not draw {n} {prefix} clips with audible vocals"
        );
        let spec = draw_spec(rng, config);
        let clip_id = format!("{prefix}-{accepted:05}");
        let pair = generate_clip(&spec, config.sample_rate, clip_id.clone())?;
        if !vocals_present(&pair.vocal)? {
            continue;
        }
        let vocal_sep = separate_vocals(&pair.mixture, &pair, config.leakage_db)?;
        let instr_sep = derive_instrumental(&pair.mixture, &vocal_sep)?;
        let mut stems = BTreeMap::new();
        write_stem(out_dir, &clip_id, StemKind::Vocal, &pair.vocal, &mut stems)?;
        write_stem(out_dir, &clip_id, StemKind::Instr, &pair.instrumental, &mut stems)?;
        write_stem(out_dir, &clip_id, StemKind::Mix, &pair.mixture, &mut stems)?;
        write_stem(out_dir, &clip_id, StemKind::VocalSep, &vocal_sep, &mut stems)?;
        write_stem(out_dir, &clip_id, StemKind::InstrSep, &instr_sep, &mut stems)?;
        entries.push(ManifestEntry {
            clip_id,
            split,
            vocal_kind: VocalKind::Isolated,
            stems,
            tempo_bpm: spec.tempo_bpm,
            key_index: spec.key_index,
            duration_s: spec.duration_s,
            seed: spec.seed,
            vocal_peak_db: peak(&pair.vocal)?,
            instrumental_peak_db: peak(&pair.instrumental)?,
            mixture_peak_db: peak(&pair.mixture)?,
            filtered: false,
            filter_reason: FilterReason::None,
        });
        accepted += 1;
    }
    Ok(())
}

/// Renders the corpus into `out_dir` (stems + `manifest.jsonl`).
///
/// Training entries carry separated vocals and the instrumental derived by
/// subtraction, and are the only entries subject to filtering. Evaluation
/// and dev entries are held out (see [`render_held_out`]); dev clips are
/// drawn after the evaluation clips.
pub fn build_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    ensure!(
        config.n_train >= 1 && config.n_eval >= 1,
        Precondition,
        "n_train and n_eval must be >= 1"
    );
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::with_capacity(config.n_train + config.n_eval);

    for i in 0..config.n_train {
        let mut spec = draw_spec(&mut rng, config);
        spec.quiet_instrumental = rng.gen_bool(config.quiet_instrumental_fraction.clamp(0.0, 1.0));
        let clip_id = format!("train-{i:05}");
        let pair = generate_clip(&spec, config.sample_rate, clip_id.clone())?;
        let vocal_sep = separate_vocals(&pair.mixture, &pair, config.leakage_db)?;
        let instr_sep = derive_instrumental(&pair.mixture, &vocal_sep)?;
        let (vdb, idb) = (peak(&vocal_sep)?, peak(&instr_sep)?);
        let decision = filter_decision(vdb, idb);
        let (filtered, reason) = if config.apply_filter {
            (!decision.keep, decision.reason)
        } else {
            (false, FilterReason::None)
        };
        let mut stems = BTreeMap::new();
        write_stem(out_dir, &clip_id, StemKind::Mix, &pair.mixture, &mut stems)?;
        write_stem(out_dir, &clip_id, StemKind::VocalSep, &vocal_sep, &mut stems)?;
        write_stem(out_dir, &clip_id, StemKind::InstrSep, &instr_sep, &mut stems)?;
        entries.push(ManifestEntry {
            clip_id,
            split: Split::Train,
            vocal_kind: VocalKind::Separated,
            stems,
            tempo_bpm: spec.tempo_bpm,
            key_index: spec.key_index,
            duration_s: spec.duration_s,
            seed: spec.seed,
            vocal_peak_db: vdb,
            instrumental_peak_db: idb,
            mixture_peak_db: peak(&pair.mixture)?,
            filtered,
            filter_reason: reason,
        });
    }

    for (split, prefix, n) in [(Split::Eval, "eval", config.n_eval), (Split::Dev, "dev", config.n_dev)] {
        render_held_out(config, &mut rng, split, prefix, n, out_dir, &mut entries)?;
    }

    let manifest = CorpusManifest { entries };
    manifest.write(out_dir)?;
    Ok(manifest)
}
