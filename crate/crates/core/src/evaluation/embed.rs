use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{mel_frames, Waveform};
use crate::codecs::{SEMANTIC_MEL_BINS, SEMANTIC_RATE};
use crate::error::{ensure, Result};

/// Seed of the fixed projection shared by every experiment.
pub const EMBEDDER_SEED: u64 = 0x00fa_d5ee_d000_0001;
pub const EMBEDDING_DIM: usize = 32;
const SUMMARY_DIM: usize = 2 * SEMANTIC_MEL_BINS;
/// Fixed centring of the log-mel summary before projection.
const MEAN_CENTRE: f64 = -6.0;
const MEAN_SCALE: f64 = 3.0;
const STD_SCALE: f64 = 2.0;

/// Clip embedder: per-bin mean and standard deviation of 64-bin, 25 Hz
/// log-mel frames, a fixed seeded affine map and `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub seed: u64,
    /// `EMBEDDING_DIM x SUMMARY_DIM`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Default for Embedder {
    fn default() -> Self {
        Self::new(EMBEDDER_SEED)
    }
}

impl Embedder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, (1.0 / SUMMARY_DIM as f64).sqrt()).expect("valid std");
        let b = Normal::new(0.0, 0.1).expect("valid std");
        let weights = (0..EMBEDDING_DIM * SUMMARY_DIM).map(|_| w.sample(&mut rng)).collect();
        let bias = (0..EMBEDDING_DIM).map(|_| b.sample(&mut rng)).collect();
        Self { seed, weights, bias }
    }

    /// The normalized 128-dim log-mel summary of a clip.
    pub fn summary(&self, w: &Waveform) -> Result<Vec<f64>> {
        let mel = mel_frames(w, SEMANTIC_RATE as u32, SEMANTIC_MEL_BINS)?;
        ensure!(mel.n_frames > 0, Precondition, "clip too short to embed");
        let n = mel.n_frames as f64;
        let mut mean = vec![0.0f64; SEMANTIC_MEL_BINS];
        for row in mel.rows() {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += *x as f64 / n);
        }
        let mut var = vec![0.0f64; SEMANTIC_MEL_BINS];
        for row in mel.rows() {
            var.iter_mut().zip(row).zip(&mean).for_each(|((v, x), m)| *v += (*x as f64 - m).powi(2) / n);
        }
        Ok(mean
            .iter()
            .map(|m| (m - MEAN_CENTRE) / MEAN_SCALE)
            .chain(var.iter().map(|v| v.sqrt() / STD_SCALE))
            .collect())
    }

    pub fn embed(&self, w: &Waveform) -> Result<Vec<f64>> {
        let s = self.summary(w)?;
        Ok(self
            .weights
            .chunks_exact(SUMMARY_DIM)
            .zip(&self.bias)
            .map(|(row, b)| (row.iter().zip(&s).map(|(a, x)| a * x).sum::<f64>() + b).tanh())
            .collect())
    }

    /// One embedding per clip.
    pub fn embed_all(&self, clips: &[Waveform]) -> Result<Vec<Vec<f64>>> {
        ensure!(!clips.is_empty(), Precondition, "no clips to embed");
        clips.iter().map(|c| self.embed(c)).collect()
    }
}
