//! Waveform representation and the DSP primitives shared by the rest of the
//! pipeline: WAV I/O, STFT, log-mel frames, resampling, loudness and noise.

mod mel;
mod resample;
mod stft;
mod wav;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};

pub use mel::{mel_filterbank, mel_frames, MelFrames, LOG_FLOOR};
pub use resample::resample;
pub use stft::{hann_window, istft, stft, Spectrogram};
pub use wav::{load_wav, save_wav};

/// Pipeline sample rate in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Window used when measuring peak RMS, in seconds.
pub const PEAK_RMS_WINDOW_S: f64 = 0.5;

/// Returned by [`peak_rms_db`] for an all-zero signal.
pub const SILENCE_DB: f64 = f64::MIN;

/// Monaural audio. Amplitude 1.0 is full scale (0 dBFS).
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        ensure!(sample_rate > 0, Precondition, "sample rate must be positive");
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Samples `[start, end)`, zero-padded past the end of the signal.
    pub fn slice_padded(&self, start: usize, end: usize) -> Self {
        let mut out = vec![0.0; end.saturating_sub(start)];
        if start < self.samples.len() {
            let stop = end.min(self.samples.len());
            out[..stop - start].copy_from_slice(&self.samples[start..stop]);
        }
        Self {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ss: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (ss / self.samples.len() as f64).sqrt()
    }

    pub fn peak_abs(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

pub fn amplitude_to_db(amplitude: f64) -> f64 {
    if amplitude > 0.0 {
        20.0 * amplitude.log10()
    } else {
        SILENCE_DB
    }
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Loudest sliding-window RMS level in dBFS, windows of `window_s` with 50% hop.
pub fn peak_rms_db(w: &Waveform, window_s: f64) -> Result<f64> {
    ensure!(window_s > 0.0, Precondition, "window must be positive");
    let n = (window_s * w.sample_rate as f64).round() as usize;
    ensure!(
        n > 0 && w.len() >= n,
        Precondition,
        "waveform of {} samples shorter than one {n}-sample window",
        w.len()
    );
    let hop = (n / 2).max(1);
    let s = w.samples();
    let mut best = 0.0f64;
    let mut start = 0;
    while start + n <= s.len() {
        let ms = s[start..start + n]
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            / n as f64;
        best = best.max(ms);
        start += hop;
    }
    Ok(if best > 0.0 {
        10.0 * best.log10()
    } else {
        SILENCE_DB
    })
}

fn check_compatible(a: &Waveform, b: &Waveform) -> Result<()> {
    ensure!(
        a.sample_rate == b.sample_rate,
        Shape,
        "sample rates differ: {} vs {}",
        a.sample_rate,
        b.sample_rate
    );
    ensure!(
        a.len() == b.len(),
        Shape,
        "lengths differ: {} vs {}",
        a.len(),
        b.len()
    );
    Ok(())
}

/// Elementwise sum. No clipping.
pub fn mix(a: &Waveform, b: &Waveform) -> Result<Waveform> {
    check_compatible(a, b)?;
    Ok(Waveform {
        samples: a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(),
        sample_rate: a.sample_rate,
    })
}

/// Elementwise difference `a - b`.
pub fn subtract(a: &Waveform, b: &Waveform) -> Result<Waveform> {
    check_compatible(a, b)?;
    Ok(Waveform {
        samples: a.samples.iter().zip(&b.samples).map(|(x, y)| x - y).collect(),
        sample_rate: a.sample_rate,
    })
}

/// `w + z` with `z` i.i.d. Gaussian of standard deviation `sigma`, drawn from a
/// ChaCha stream keyed by `seed`.
pub fn add_noise(w: &Waveform, sigma: f64, seed: u64) -> Result<Waveform> {
    ensure!(sigma >= 0.0 && sigma.is_finite(), Precondition, "sigma must be >= 0");
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let normal = Normal::new(0.0f64, sigma).map_err(|e| Error::Precondition(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Waveform {
        samples: w
            .samples
            .iter()
            .map(|&s| (s as f64 + normal.sample(&mut rng)) as f32)
            .collect(),
        sample_rate: w.sample_rate,
    })
}

/// Signal-to-noise ratio of `estimate` against `reference`, in dB.
pub fn snr_db(reference: &[f32], estimate: &[f32]) -> f64 {
    let (mut sig, mut err) = (0.0f64, 0.0f64);
    for (&r, &e) in reference.iter().zip(estimate) {
        sig += (r as f64).powi(2);
        err += (r as f64 - e as f64).powi(2);
    }
    if err == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (sig / err).log10()
}

/// Pearson correlation of two equal-length signals.
pub fn correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().map(|&x| x as f64).sum::<f64>() / n as f64;
    let mb = b[..n].iter().map(|&x| x as f64).sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] as f64 - ma, b[i] as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
