use serde::{Deserialize, Serialize};

use crate::audio::{stft, Waveform};
use crate::error::{ensure, Result};

pub const N_KEYS: usize = 24;

/// Krumhansl-Kessler probe-tone ratings, tonic first.
pub const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
pub const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

const CHROMA_WINDOW: usize = 4096;
const CHROMA_HOP: usize = 2048;
const CHROMA_MIN_HZ: f64 = 80.0;
const CHROMA_MAX_HZ: f64 = 4000.0;
const MIN_KEY_DURATION_S: f64 = 2.0;

/// Distribution over 24 keys: indices 0..12 major on C..B, 12..24 minor on C..B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyProbabilities {
    pub probs: [f64; N_KEYS],
}

impl KeyProbabilities {
    pub fn uniform() -> Self {
        Self {
            probs: [1.0 / N_KEYS as f64; N_KEYS],
        }
    }

    /// Index of the most probable key; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// The distribution with every key moved up `semitones`.
    pub fn transposed(&self, semitones: i32) -> Self {
        let mut probs = [0.0; N_KEYS];
        for (k, &p) in self.probs.iter().enumerate() {
            let mode = k / 12 * 12;
            let tonic = (k % 12) as i32;
            probs[mode + (tonic + semitones).rem_euclid(12) as usize] = p;
        }
        Self { probs }
    }
}

/// Mean magnitude per pitch class (C = 0) between 80 Hz and 4 kHz.
pub fn chroma(w: &Waveform) -> Result<[f64; 12]> {
    let spec = stft(w, CHROMA_WINDOW, CHROMA_HOP)?;
    let classes: Vec<Option<usize>> = (0..spec.bin_count)
        .map(|b| {
            let f = spec.bin_frequency(b);
            (CHROMA_MIN_HZ..=CHROMA_MAX_HZ)
                .contains(&f)
                .then(|| (12.0 * (f / 440.0).log2() + 69.0).round().rem_euclid(12.0) as usize)
        })
        .collect();
    let mut c = [0.0; 12];
    for f in 0..spec.n_frames {
        for (x, class) in spec.frame(f).iter().zip(&classes) {
            if let Some(pc) = class {
                c[*pc] += x.norm() as f64;
            }
        }
    }
    for v in &mut c {
        *v /= spec.n_frames as f64;
    }
    Ok(c)
}

fn pearson(a: &[f64; 12], b: &[f64; 12]) -> Option<f64> {
    let ma = a.iter().sum::<f64>() / 12.0;
    let mb = b.iter().sum::<f64>() / 12.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 1e-18 && sbb > 1e-18).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Key probabilities from a chroma vector: correlation `r` with every
/// rotation of the two profiles, mapped to `(r + 1) / 2` and normalized.
/// A flat chroma gives the uniform distribution.
pub fn key_probabilities_from_chroma(chroma: &[f64; 12]) -> KeyProbabilities {
    let mut probs = [0.0; N_KEYS];
    for (mode, profile) in [MAJOR_PROFILE, MINOR_PROFILE].iter().enumerate() {
        for tonic in 0..12 {
            let rotated: [f64; 12] = std::array::from_fn(|pc| profile[(pc + 12 - tonic) % 12]);
            match pearson(chroma, &rotated) {
                Some(r) => probs[12 * mode + tonic] = (r + 1.0) / 2.0,
                None => return KeyProbabilities::uniform(),
            }
        }
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return KeyProbabilities::uniform();
    }
    for p in &mut probs {
        *p /= total;
    }
    KeyProbabilities { probs }
}

/// Key probabilities of a clip of at least 2 s. Silence gives the uniform
/// distribution.
pub fn estimate_key(w: &Waveform) -> Result<KeyProbabilities> {
    ensure!(
        w.duration_s() >= MIN_KEY_DURATION_S,
        Precondition,
        "key estimation needs at least {MIN_KEY_DURATION_S} s, got {:.3} s",
        w.duration_s()
    );
    Ok(key_probabilities_from_chroma(&chroma(w)?))
}
