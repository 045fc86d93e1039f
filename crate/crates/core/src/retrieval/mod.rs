//! Retrieval and random baselines: key and tempo estimation, nearest-key
//! lookup in a pool of instrumentals and tempo-matched time stretching.

mod key;
mod stretch;
mod tempo;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, save_wav, Waveform, DEFAULT_SAMPLE_RATE};
use crate::corpus::{generate_clip, ClipSpec};
use crate::error::{ensure, Error, Result};

pub use key::{
    chroma, estimate_key, key_probabilities_from_chroma, KeyProbabilities, MAJOR_PROFILE, MINOR_PROFILE, N_KEYS,
};
pub use stretch::{clamp_ratio, time_stretch, MAX_RATIO, MIN_RATIO, STRETCH_HOP, STRETCH_WINDOW};
pub use tempo::{estimate_tempo, onset_envelope, tempo_from_envelope, MAX_TEMPO_BPM, MIN_TEMPO_BPM, ONSET_RATE_HZ};

pub const POOL_INDEX_FILE: &str = "pool.jsonl";
pub const MIN_POOL_DURATION_S: f64 = 20.0;
pub const BASELINE_EXCERPT_S: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub clip_id: String,
    pub instrumental: Waveform,
    pub key_probs: KeyProbabilities,
    pub tempo_bpm: f64,
}

/// One line of the cached pool index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolIndexEntry {
    pub clip_id: String,
    pub file: String,
    pub duration_s: f64,
    pub key_probs: KeyProbabilities,
    pub tempo_bpm: f64,
}

/// Instrumentals of at least 20 s, sorted by clip id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalPool {
    entries: Vec<PoolEntry>,
    excluded: Vec<String>,
}

fn pool_file(clip_id: &str) -> String {
    format!("{clip_id}_instr.wav")
}

impl RetrievalPool {
    /// Estimates key and tempo of every instrumental; shorter ones are
    /// excluded.
    pub fn from_instrumentals(items: Vec<(String, Waveform)>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut excluded = Vec::new();
        for (clip_id, instrumental) in items {
            if instrumental.duration_s() < MIN_POOL_DURATION_S {
                excluded.push(clip_id);
                continue;
            }
            entries.push(PoolEntry {
                key_probs: estimate_key(&instrumental)?,
                tempo_bpm: estimate_tempo(&instrumental)?,
                clip_id,
                instrumental,
            });
        }
        Self::from_entries(entries, excluded)
    }

    fn from_entries(mut entries: Vec<PoolEntry>, mut excluded: Vec<String>) -> Result<Self> {
        entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        excluded.sort();
        ensure!(
            entries.windows(2).all(|p| p[0].clip_id != p[1].clip_id),
            Precondition,
            "duplicate clip id in pool"
        );
        ensure!(
            entries.windows(2).all(|p| p[0].instrumental.sample_rate() == p[1].instrumental.sample_rate()),
            Precondition,
            "pool entries differ in sample rate"
        );
        Ok(Self { entries, excluded })
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    /// Clip ids dropped for being shorter than 20 s.
    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index(&self) -> Vec<PoolIndexEntry> {
        self.entries
            .iter()
            .map(|e| PoolIndexEntry {
                clip_id: e.clip_id.clone(),
                file: pool_file(&e.clip_id),
                duration_s: e.instrumental.duration_s(),
                key_probs: e.key_probs,
                tempo_bpm: e.tempo_bpm,
            })
            .collect()
    }

    /// Writes every instrumental and the index to `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for e in &self.entries {
            save_wav(&e.instrumental, dir.join(pool_file(&e.clip_id)))?;
        }
        let mut text = String::new();
        for line in self.index() {
            text.push_str(&serde_json::to_string(&line)?);
            text.push('\n');
        }
        let path = dir.join(POOL_INDEX_FILE);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a pool from its cached index, or indexes the `*_instr.wav`
    /// files of `dir` and caches the result when no index exists.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(POOL_INDEX_FILE);
        if !path.exists() {
            let mut items = Vec::new();
            for item in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
                let item = item.map_err(|e| Error::io(dir, e))?;
                let name = item.file_name().to_string_lossy().into_owned();
                if let Some(id) = name.strip_suffix("_instr.wav") {
                    items.push((id.to_string(), load_wav(item.path())?));
                }
            }
            let pool = Self::from_instrumentals(items)?;
            pool.write(dir)?;
            return Ok(pool);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: PoolIndexEntry = serde_json::from_str(line)?;
            entries.push(PoolEntry {
                instrumental: load_wav(dir.join(&row.file))?,
                clip_id: row.clip_id,
                key_probs: row.key_probs,
                tempo_bpm: row.tempo_bpm,
            });
        }
        Self::from_entries(entries, Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub n_tracks: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub sample_rate: u32,
    pub tempo_min: f64,
    pub tempo_max: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            n_tracks: 24,
            duration_s: 30.0,
            seed: 1,
            sample_rate: DEFAULT_SAMPLE_RATE,
            tempo_min: 70.0,
            tempo_max: 160.0,
        }
    }
}

/// Renders full-length instrumentals with the corpus synthesizer into `dir`
/// and indexes them.
pub fn build_pool(config: &PoolConfig, dir: &Path) -> Result<RetrievalPool> {
    ensure!(config.n_tracks >= 1, Precondition, "pool needs at least one track");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut items = Vec::with_capacity(config.n_tracks);
    for i in 0..config.n_tracks {
        let tempo = if config.tempo_max > config.tempo_min {
            rng.gen_range(config.tempo_min..=config.tempo_max).round()
        } else {
            config.tempo_min
        };
        let spec = ClipSpec::new(tempo, rng.gen_range(0..24u8), config.duration_s, rng.gen());
        let clip_id = format!("pool-{i:05}");
        items.push((clip_id.clone(), generate_clip(&spec, config.sample_rate, clip_id)?.instrumental));
    }
    let pool = RetrievalPool::from_instrumentals(items)?;
    pool.write(dir)?;
    Ok(pool)
}

/// `len` samples of `w` from `start`, wrapping around at the end.
pub fn excerpt(w: &Waveform, start: usize, len: usize) -> Result<Waveform> {
    ensure!(!w.is_empty(), Precondition, "cannot excerpt an empty waveform");
    let x = w.samples();
    let samples = (0..len).map(|i| x[(start + i) % x.len()]).collect();
    Waveform::new(samples, w.sample_rate())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub clip_id: String,
    pub key_distance: f64,
    pub raw_ratio: f64,
    pub ratio: f64,
    pub instrumental: Waveform,
}

/// Nearest pool entry to the vocal's key probabilities (ties to the lowest
/// clip id), stretched to `query_tempo` and cut to the vocal's length from
/// the track start.
pub fn retrieve(query_vocal: &Waveform, query_tempo: f64, pool: &RetrievalPool) -> Result<Retrieved> {
    ensure!(!pool.is_empty(), Precondition, "empty retrieval pool");
    ensure!(
        query_tempo.is_finite() && query_tempo > 0.0,
        Precondition,
        "query tempo must be positive"
    );
    let query = estimate_key(query_vocal)?;
    let mut best = &pool.entries[0];
    let mut best_d = query.distance(&best.key_probs);
    for e in &pool.entries[1..] {
        let d = query.distance(&e.key_probs);
        if d < best_d {
            best = e;
            best_d = d;
        }
    }
    ensure!(
        best.instrumental.sample_rate() == query_vocal.sample_rate(),
        Precondition,
        "pool rate {} differs from vocal rate {}",
        best.instrumental.sample_rate(),
        query_vocal.sample_rate()
    );
    let raw_ratio = query_tempo / best.tempo_bpm;
    let ratio = clamp_ratio(raw_ratio)?;
    let len = query_vocal.len();
    // only the material that ends up in the excerpt is stretched
    let needed = ((len as f64 * ratio).ceil() as usize + 2 * STRETCH_WINDOW).min(best.instrumental.len());
    let source = best.instrumental.slice_padded(0, needed);
    let stretched = time_stretch(&source, ratio)?;
    Ok(Retrieved {
        clip_id: best.clip_id.clone(),
        key_distance: best_d,
        raw_ratio,
        ratio,
        instrumental: excerpt(&stretched, 0, len)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomPick {
    pub clip_id: String,
    pub offset: usize,
    pub instrumental: Waveform,
}

/// A uniformly chosen pool entry and a uniformly placed excerpt of
/// `duration_s`.
pub fn random_baseline(pool: &RetrievalPool, seed: u64, duration_s: f64) -> Result<RandomPick> {
    ensure!(!pool.is_empty(), Precondition, "empty retrieval pool");
    ensure!(duration_s > 0.0, Precondition, "excerpt duration must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entry = &pool.entries[rng.gen_range(0..pool.len())];
    let w = &entry.instrumental;
    let len = (duration_s * w.sample_rate() as f64).round() as usize;
    let offset = rng.gen_range(0..=w.len().saturating_sub(len));
    Ok(RandomPick {
        clip_id: entry.clip_id.clone(),
        offset,
        instrumental: excerpt(w, offset, len)?,
    })
}
