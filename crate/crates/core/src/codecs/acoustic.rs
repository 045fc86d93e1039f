use std::fs;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codes::{coarse_frames, split_codes, CodeMatrix, CodeSequence, ACOUSTIC_FRAME_RATE};
use super::kmeans::{assign, kmeans, KMeansParams};
use super::{COARSE_LEVELS, N_LEVELS};
use crate::audio::{hann_window, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{ensure, Error, Result};

const MAGIC: &[u8; 4] = b"RVQ1";
pub const MIN_TRAINING_FRAMES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcousticCodecConfig {
    pub sample_rate: u32,
    /// Must equal two hops of a 50 Hz frame clock.
    pub frame_dim: usize,
    pub codebook_size: usize,
    pub seed: u64,
    pub iterations: usize,
    /// Train on at most this many frames, drawn without replacement.
    pub max_training_frames: Option<usize>,
}

impl Default for AcousticCodecConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            frame_dim: 2 * (DEFAULT_SAMPLE_RATE as usize / 50),
            codebook_size: 1024,
            seed: 0,
            iterations: 25,
            max_training_frames: None,
        }
    }
}

/// Residual vector quantizer over Hann-windowed time-domain frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticCodec {
    pub sample_rate: u32,
    pub hop: usize,
    pub frame_dim: usize,
    pub codebook_size: usize,
    /// `N_LEVELS x codebook_size x frame_dim`, empty until trained.
    codebooks: Vec<f32>,
}

/// Number of 50 Hz frames covering `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    (len + hop / 2) / hop
}

fn frame_start(i: usize, hop: usize) -> isize {
    (i * hop) as isize - (hop / 2) as isize
}

/// Windowed analysis frames, row-major `n_frames x 2 hop`.
pub fn analysis_frames(w: &Waveform, hop: usize) -> Vec<f32> {
    let dim = 2 * hop;
    let window = hann_window(dim);
    let samples = w.samples();
    let n = frame_count(samples.len(), hop);
    let mut out = vec![0.0f32; n * dim];
    for (i, frame) in out.chunks_exact_mut(dim).enumerate() {
        let start = frame_start(i, hop);
        for (j, v) in frame.iter_mut().enumerate() {
            let t = start + j as isize;
            if t >= 0 && (t as usize) < samples.len() {
                *v = samples[t as usize] * window[j];
            }
        }
    }
    out
}

/// Weighted overlap-add of `frames` with a Hann synthesis window.
pub fn synthesize(frames: &[f32], hop: usize, out_len: usize, sample_rate: u32) -> Waveform {
    let dim = 2 * hop;
    let window = hann_window(dim);
    let mut acc = vec![0.0f64; out_len];
    let mut norm = vec![0.0f64; out_len];
    for (i, frame) in frames.chunks_exact(dim).enumerate() {
        let start = frame_start(i, hop);
        for (j, v) in frame.iter().enumerate() {
            let t = start + j as isize;
            if t >= 0 && (t as usize) < out_len {
                let w = window[j] as f64;
                acc[t as usize] += w * *v as f64;
                norm[t as usize] += w * w;
            }
        }
    }
    let samples = acc
        .iter()
        .zip(&norm)
        .map(|(a, n)| if *n > 1e-8 { (a / n) as f32 } else { 0.0 })
        .collect();
    Waveform::new(samples, sample_rate).expect("positive sample rate")
}

/// Trains `N_LEVELS` codebooks greedily, each on the residual left by the
/// levels before it. When `codebook_size >= 2` entry 0 of every level is the
/// zero vector, so residual norms never grow.
pub fn train_rvq(frames: &[f32], dim: usize, codebook_size: usize, iterations: usize, seed: u64) -> Result<Vec<f32>> {
    ensure!(dim > 0 && frames.len() % dim == 0, Shape, "frames are not {dim} wide");
    let n = frames.len() / dim;
    ensure!(
        n >= MIN_TRAINING_FRAMES,
        Training,
        "codec training needs at least {MIN_TRAINING_FRAMES} frames, got {n}"
    );
    ensure!(codebook_size >= 1 && codebook_size <= 1 << 16, Config, "codebook_size {codebook_size} out of range");
    let mut residual = frames.to_vec();
    let mut books = Vec::with_capacity(N_LEVELS * codebook_size * dim);
    for level in 0..N_LEVELS {
        let params = KMeansParams {
            k: codebook_size,
            iterations,
            seed: seed.wrapping_add(level as u64),
            zero_centroid: codebook_size >= 2,
        };
        let book = kmeans(&residual, dim, &params);
        let (labels, _) = assign(&residual, dim, &book);
        for (r, &l) in residual.chunks_exact_mut(dim).zip(&labels) {
            let c = &book[l as usize * dim..(l as usize + 1) * dim];
            for (x, y) in r.iter_mut().zip(c) {
                *x -= y;
            }
        }
        log::debug!(
            "rvq level {}: residual energy {:.4e}",
            level + 1,
            residual.iter().map(|v| (*v as f64).powi(2)).sum::<f64>()
        );
        books.extend_from_slice(&book);
    }
    Ok(books)
}

fn subsample(frames: Vec<f32>, dim: usize, cap: Option<usize>, seed: u64) -> Vec<f32> {
    let n = frames.len() / dim;
    match cap {
        Some(cap) if cap < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f4a3);
            let mut idx = rand::seq::index::sample(&mut rng, n, cap).into_vec();
            idx.sort_unstable();
            let mut out = Vec::with_capacity(cap * dim);
            for i in idx {
                out.extend_from_slice(&frames[i * dim..(i + 1) * dim]);
            }
            out
        }
        _ => frames,
    }
}

pub fn train_acoustic_codec(corpus: &[Waveform], config: &AcousticCodecConfig) -> Result<AcousticCodec> {
    let hop = (config.sample_rate as f64 / ACOUSTIC_FRAME_RATE) as usize;
    ensure!(
        config.sample_rate % ACOUSTIC_FRAME_RATE as u32 == 0 && config.frame_dim == 2 * hop,
        Config,
        "frame_dim {} must be two hops of a 50 Hz clock at {} Hz",
        config.frame_dim,
        config.sample_rate
    );
    let mut frames = Vec::new();
    for w in corpus {
        ensure!(
            w.sample_rate() == config.sample_rate,
            Precondition,
            "training audio at {} Hz, codec at {} Hz",
            w.sample_rate(),
            config.sample_rate
        );
        frames.extend(analysis_frames(w, hop));
    }
    let frames = subsample(frames, config.frame_dim, config.max_training_frames, config.seed);
    let codebooks = train_rvq(&frames, config.frame_dim, config.codebook_size, config.iterations, config.seed)?;
    Ok(AcousticCodec {
        sample_rate: config.sample_rate,
        hop,
        frame_dim: config.frame_dim,
        codebook_size: config.codebook_size,
        codebooks,
    })
}

impl AcousticCodec {
    /// A codec with no codebooks; every coding call fails until trained.
    pub fn untrained(config: &AcousticCodecConfig) -> Self {
        Self {
            sample_rate: config.sample_rate,
            hop: config.frame_dim / 2,
            frame_dim: config.frame_dim,
            codebook_size: config.codebook_size,
            codebooks: Vec::new(),
        }
    }

    /// Wraps explicit codebooks (`N_LEVELS x codebook_size x frame_dim`).
    pub fn from_codebooks(sample_rate: u32, codebook_size: usize, codebooks: Vec<f32>) -> Result<Self> {
        let hop = (sample_rate as f64 / ACOUSTIC_FRAME_RATE) as usize;
        ensure!(hop > 0, Config, "sample rate {sample_rate} too low");
        let frame_dim = 2 * hop;
        ensure!(
            codebooks.len() == N_LEVELS * codebook_size * frame_dim,
            Shape,
            "expected {} codebook values, got {}",
            N_LEVELS * codebook_size * frame_dim,
            codebooks.len()
        );
        ensure!(codebooks.iter().all(|v| v.is_finite()), Checkpoint, "non-finite codebook entry");
        Ok(Self {
            sample_rate,
            hop,
            frame_dim,
            codebook_size,
            codebooks,
        })
    }

    pub fn is_trained(&self) -> bool {
        !self.codebooks.is_empty()
    }

    pub fn n_levels(&self) -> usize {
        N_LEVELS
    }

    /// Codebook of `level` (0-based), row-major `codebook_size x frame_dim`.
    pub fn codebook(&self, level: usize) -> &[f32] {
        let size = self.codebook_size * self.frame_dim;
        &self.codebooks[level * size..(level + 1) * size]
    }

    fn require_trained(&self) -> Result<()> {
        ensure!(self.is_trained(), State, "acoustic codec is not trained");
        Ok(())
    }

    fn check_rate(&self, w: &Waveform) -> Result<()> {
        ensure!(
            w.sample_rate() == self.sample_rate,
            Precondition,
            "audio at {} Hz, codec at {} Hz",
            w.sample_rate(),
            self.sample_rate
        );
        Ok(())
    }

    /// Greedy residual quantization of every frame; also returns the final
    /// residual frames.
    pub fn quantize_frames(&self, frames: &[f32]) -> Result<(CodeMatrix, Vec<f32>)> {
        self.require_trained()?;
        let dim = self.frame_dim;
        ensure!(frames.len() % dim == 0, Shape, "frames are not {dim} wide");
        let n = frames.len() / dim;
        let mut residual = frames.to_vec();
        let mut data = vec![0u16; n * N_LEVELS];
        for level in 0..N_LEVELS {
            let book = self.codebook(level);
            let (labels, _) = assign(&residual, dim, book);
            for (i, (r, &l)) in residual.chunks_exact_mut(dim).zip(&labels).enumerate() {
                data[i * N_LEVELS + level] = l as u16;
                for (x, y) in r.iter_mut().zip(&book[l as usize * dim..(l as usize + 1) * dim]) {
                    *x -= y;
                }
            }
        }
        Ok((CodeMatrix::new(n, data)?, residual))
    }

    pub fn encode_matrix(&self, w: &Waveform) -> Result<CodeMatrix> {
        self.require_trained()?;
        self.check_rate(w)?;
        Ok(self.quantize_frames(&analysis_frames(w, self.hop))?.0)
    }

    /// Coarse (levels 1-4) and fine (levels 5-12) code streams.
    pub fn encode(&self, w: &Waveform) -> Result<(CodeSequence, CodeSequence)> {
        let m = self.encode_matrix(w)?;
        Ok(split_codes(&m, w.duration_s()))
    }

    /// Sums the first `levels` codebook entries of every frame and
    /// overlap-adds the result into `out_len` samples.
    pub fn decode_matrix(&self, m: &CodeMatrix, levels: usize, out_len: usize) -> Result<Waveform> {
        self.require_trained()?;
        ensure!(levels <= N_LEVELS, Shape, "at most {N_LEVELS} levels, got {levels}");
        let dim = self.frame_dim;
        let mut frames = vec![0.0f32; m.n_frames * dim];
        for (i, frame) in frames.chunks_exact_mut(dim).enumerate() {
            for level in 0..levels {
                let c = m.get(i, level) as usize;
                ensure!(
                    c < self.codebook_size,
                    Shape,
                    "code {c} outside codebook of {}",
                    self.codebook_size
                );
                let v = &self.codebook(level)[c * dim..(c + 1) * dim];
                for (x, y) in frame.iter_mut().zip(v) {
                    *x += y;
                }
            }
        }
        Ok(synthesize(&frames, self.hop, out_len, self.sample_rate))
    }

    fn out_len(&self, duration_s: f64) -> usize {
        (duration_s * self.sample_rate as f64).round() as usize
    }

    /// Decodes coarse codes, plus fine codes when given.
    pub fn decode(&self, coarse: &CodeSequence, fine: Option<&CodeSequence>) -> Result<Waveform> {
        let n = coarse_frames(coarse)?;
        let out_len = self.out_len(coarse.source_duration_s);
        match fine {
            Some(f) => {
                let m = super::combine_codes(coarse, f)?;
                self.decode_matrix(&m, N_LEVELS, out_len)
            }
            None => {
                let mut data = vec![0u16; n * N_LEVELS];
                for (f, c) in data.chunks_exact_mut(N_LEVELS).zip(coarse.codes.chunks_exact(COARSE_LEVELS)) {
                    f[..COARSE_LEVELS].copy_from_slice(c);
                }
                self.decode_matrix(&CodeMatrix::new(n, data)?, COARSE_LEVELS, out_len)
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.require_trained()?;
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(24 + 4 * self.codebooks.len());
        bytes.extend_from_slice(MAGIC);
        for v in [self.sample_rate, self.hop as u32, self.frame_dim as u32, self.codebook_size as u32, N_LEVELS as u32] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.codebooks {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        ensure!(bytes.len() >= 24 && &bytes[..4] == MAGIC, Checkpoint, "{} is not an RVQ1 checkpoint", path.display());
        let header: Vec<u32> = bytes[4..24]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let (sample_rate, hop, frame_dim, codebook_size, levels) =
            (header[0], header[1] as usize, header[2] as usize, header[3] as usize, header[4] as usize);
        ensure!(levels == N_LEVELS, Checkpoint, "checkpoint has {levels} levels, expected {N_LEVELS}");
        ensure!(frame_dim == 2 * hop, Checkpoint, "frame_dim {frame_dim} is not two hops of {hop}");
        let body = &bytes[24..];
        ensure!(
            body.len() == 4 * levels * codebook_size * frame_dim,
            Checkpoint,
            "truncated codebook payload"
        );
        let codebooks: Vec<f32> = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let codec = Self::from_codebooks(sample_rate, codebook_size, codebooks)?;
        ensure!(codec.hop == hop, Checkpoint, "hop {hop} inconsistent with {sample_rate} Hz");
        Ok(codec)
    }
}

