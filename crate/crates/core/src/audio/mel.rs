use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use super::{hann_window, Waveform};
use crate::error::{ensure, Result};

/// Additive floor inside the log of every mel frame.
pub const LOG_FLOOR: f32 = 1e-5;

/// Log-mel magnitude frames, row-major `n_frames x mel_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrames {
    pub data: Vec<f32>,
    pub n_frames: usize,
    pub mel_bins: usize,
    pub frame_rate: u32,
}

impl MelFrames {
    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.mel_bins..(i + 1) * self.mel_bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.mel_bins)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters (unit peak) spanning 0 Hz to Nyquist, row-major
/// `mel_bins x (fft_size / 2 + 1)`.
pub fn mel_filterbank(mel_bins: usize, fft_size: usize, sample_rate: u32) -> Vec<f32> {
    let bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let mut fb = vec![0.0f32; mel_bins * bins];
    for m in 0..mel_bins {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * sample_rate as f64 / fft_size as f64;
            let v = if f > lo && f <= centre {
                (f - lo) / (centre - lo)
            } else if f > centre && f < hi {
                (hi - f) / (hi - centre)
            } else {
                0.0
            };
            fb[m * bins + b] = v as f32;
        }
    }
    fb
}

/// `log(mel + 1e-5)` frames at `frame_rate`, one frame per hop of
/// `sample_rate / frame_rate` samples, analysed over a two-hop Hann window.
/// Yields `round(len / hop)` frames.
/// Spectra are amplitude-calibrated: a sine of amplitude `a` peaks at `a`.
pub fn mel_frames(w: &Waveform, frame_rate: u32, mel_bins: usize) -> Result<MelFrames> {
    ensure!(mel_bins >= 1, Precondition, "mel_bins must be at least 1");
    ensure!(
        frame_rate > 0 && w.sample_rate() % frame_rate == 0,
        Precondition,
        "frame rate {frame_rate} does not divide sample rate {}",
        w.sample_rate()
    );
    let hop = (w.sample_rate() / frame_rate) as usize;
    let n = 2 * hop;
    let bins = n / 2 + 1;
    let window = hann_window(n);
    let scale = 2.0 / window.iter().sum::<f32>();
    let fb = mel_filterbank(mel_bins, n, w.sample_rate());
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n);
    let samples = w.samples();
    let n_frames = (samples.len() + hop / 2) / hop;
    let mut buf = vec![Complex32::new(0.0, 0.0); n];
    let mut mag = vec![0.0f32; bins];
    let mut data = Vec::with_capacity(n_frames * mel_bins);
    for f in 0..n_frames {
        let start = (f * hop) as isize - (hop / 2) as isize;
        for (k, b) in buf.iter_mut().enumerate() {
            let idx = start + k as isize;
            let x = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize]
            } else {
                0.0
            };
            *b = Complex32::new(x * window[k], 0.0);
        }
        fft.process(&mut buf);
        for (m, c) in mag.iter_mut().zip(&buf[..bins]) {
            *m = c.norm() * scale;
        }
        for row in fb.chunks_exact(bins) {
            let e: f32 = row.iter().zip(&mag).map(|(a, b)| a * b).sum();
            data.push((e + LOG_FLOOR).ln());
        }
    }
    Ok(MelFrames {
        data,
        n_frames,
        mel_bins,
        frame_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_hits_the_floor() {
        let m = mel_frames(&Waveform::zeros(16000, 16000), 25, 64).unwrap();
        assert_eq!(m.n_frames, 25);
        assert!(m.data.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn ten_seconds_at_25_hz_is_250_frames() {
        let m = mel_frames(&Waveform::zeros(160_000, 16000), 25, 64).unwrap();
        assert_eq!(m.n_frames, 250);
        assert_eq!(m.data.len(), 250 * 64);
    }

    #[test]
    fn tone_energy_lands_in_covering_bins() {
        let sr = 16000;
        let w = Waveform::new(
            (0..sr as usize)
                .map(|i| (0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr as f64).sin()) as f32)
                .collect(),
            sr,
        )
        .unwrap();
        let m = mel_frames(&w, 25, 64).unwrap();
        let fb = mel_filterbank(64, 1280, sr);
        // oracle: filters with the largest response at 440 Hz
        let bin_440 = (440.0f64 * 1280.0 / sr as f64).round() as usize;
        let covering: Vec<usize> = (0..64).filter(|&b| fb[b * 641 + bin_440] > 0.0).collect();
        assert!(!covering.is_empty());
        let row = m.frame(12);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(covering.contains(&argmax), "{argmax} not in {covering:?}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let w = Waveform::zeros(16000, 16000);
        assert!(mel_frames(&w, 25, 0).is_err());
        assert!(mel_frames(&w, 3, 64).is_err());
    }

    #[test]
    fn filterbank_spans_to_nyquist() {
        let fb = mel_filterbank(8, 512, 16000);
        let bins = 257;
        // every interior bin is covered by some filter
        for b in 1..bins - 1 {
            assert!((0..8).any(|m| fb[m * bins + b] > 0.0), "bin {b} uncovered");
        }
    }
}
