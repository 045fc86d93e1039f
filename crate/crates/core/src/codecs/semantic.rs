use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codes::{CodeKind, CodeSequence, SEMANTIC_RATE};
use super::kmeans::{assign, kmeans, KMeansParams};
use crate::audio::{mel_frames, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{ensure, Error, Result};

const MAGIC: &[u8; 4] = b"SEM1";
pub const SEMANTIC_MEL_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticConfig {
    pub k: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub mel_bins: usize,
    pub iterations: usize,
    pub max_training_frames: Option<usize>,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            k: 1024,
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            mel_bins: SEMANTIC_MEL_BINS,
            iterations: 50,
            max_training_frames: None,
        }
    }
}

/// k-means codebook over 25 Hz log-mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticQuantizer {
    pub sample_rate: u32,
    pub frame_rate: u32,
    pub mel_bins: usize,
    pub k: usize,
    /// `k x mel_bins`, empty until trained.
    centroids: Vec<f32>,
}

pub fn train_semantic(corpus: &[Waveform], config: &SemanticConfig) -> Result<SemanticQuantizer> {
    ensure!(config.k >= 2 && config.k <= 1 << 16, Config, "k = {} out of range", config.k);
    let frame_rate = SEMANTIC_RATE as u32;
    let mut frames = Vec::new();
    for w in corpus {
        ensure!(
            w.sample_rate() == config.sample_rate,
            Precondition,
            "training audio at {} Hz, quantizer at {} Hz",
            w.sample_rate(),
            config.sample_rate
        );
        frames.extend(mel_frames(w, frame_rate, config.mel_bins)?.data);
    }
    let n = frames.len() / config.mel_bins;
    ensure!(
        n >= 10 * config.k,
        Training,
        "semantic k-means with k = {} needs {} frames, got {n}",
        config.k,
        10 * config.k
    );
    let frames = match config.max_training_frames {
        Some(cap) if cap < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e3a_11c0);
            let mut idx = rand::seq::index::sample(&mut rng, n, cap.max(10 * config.k)).into_vec();
            idx.sort_unstable();
            let d = config.mel_bins;
            idx.iter().flat_map(|&i| frames[i * d..(i + 1) * d].iter().copied()).collect()
        }
        _ => frames,
    };
    let centroids = kmeans(
        &frames,
        config.mel_bins,
        &KMeansParams {
            k: config.k,
            iterations: config.iterations,
            seed: config.seed,
            zero_centroid: false,
        },
    );
    Ok(SemanticQuantizer {
        sample_rate: config.sample_rate,
        frame_rate,
        mel_bins: config.mel_bins,
        k: config.k,
        centroids,
    })
}

impl SemanticQuantizer {
    pub fn untrained(config: &SemanticConfig) -> Self {
        Self {
            sample_rate: config.sample_rate,
            frame_rate: SEMANTIC_RATE as u32,
            mel_bins: config.mel_bins,
            k: config.k,
            centroids: Vec::new(),
        }
    }

    pub fn is_trained(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn encode(&self, w: &Waveform) -> Result<CodeSequence> {
        ensure!(self.is_trained(), State, "semantic quantizer is not trained");
        ensure!(
            w.sample_rate() == self.sample_rate,
            Precondition,
            "audio at {} Hz, quantizer at {} Hz",
            w.sample_rate(),
            self.sample_rate
        );
        let mel = mel_frames(w, self.frame_rate, self.mel_bins)?;
        let (labels, _) = assign(&mel.data, self.mel_bins, &self.centroids);
        Ok(CodeSequence::new(
            labels.into_iter().map(|l| l as u16).collect(),
            CodeKind::Semantic,
            w.duration_s(),
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        ensure!(self.is_trained(), State, "semantic quantizer is not trained");
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(20 + 4 * self.centroids.len());
        bytes.extend_from_slice(MAGIC);
        for v in [self.sample_rate, self.frame_rate, self.mel_bins as u32, self.k as u32] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.centroids {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ensure!(bytes.len() >= 20 && &bytes[..4] == MAGIC, Checkpoint, "{} is not a SEM1 checkpoint", path.display());
        let h: Vec<u32> = bytes[4..20]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let (sample_rate, frame_rate, mel_bins, k) = (h[0], h[1], h[2] as usize, h[3] as usize);
        ensure!(frame_rate > 0 && sample_rate % frame_rate == 0, Checkpoint, "bad frame rate {frame_rate}");
        ensure!(k >= 2 && mel_bins >= 1, Checkpoint, "bad dimensions k = {k}, mel_bins = {mel_bins}");
        let body = &bytes[20..];
        ensure!(body.len() == 4 * k * mel_bins, Checkpoint, "truncated centroid payload");
        let centroids: Vec<f32> = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        ensure!(centroids.iter().all(|v| v.is_finite()), Checkpoint, "non-finite centroid");
        Ok(Self {
            sample_rate,
            frame_rate,
            mel_bins,
            k,
            centroids,
        })
    }
}
