use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{ensure, Result};

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
            (s * s) as f32
        })
        .collect()
}

/// Complex STFT frames, row-major `n_frames x bin_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Complex32>,
    pub n_frames: usize,
    pub bin_count: usize,
    pub window_size: usize,
    pub hop_size: usize,
    pub sample_rate: u32,
    /// Length of the analysed signal, needed to invert exactly.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_size as f64
    }

    pub fn frame(&self, i: usize) -> &[Complex32] {
        &self.frames[i * self.bin_count..(i + 1) * self.bin_count]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [Complex32] {
        &mut self.frames[i * self.bin_count..(i + 1) * self.bin_count]
    }

    pub fn magnitudes(&self) -> Vec<f32> {
        self.frames.iter().map(|c| c.norm()).collect()
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.window_size as f64
    }
}

/// Hann-windowed STFT with frames centred on `i * hop` (signal zero-padded by
/// half a window on each side).
pub fn stft(w: &Waveform, window_size: usize, hop: usize) -> Result<Spectrogram> {
    ensure!(
        window_size > 0 && hop > 0,
        Precondition,
        "window and hop must be positive"
    );
    ensure!(hop <= window_size, Precondition, "hop exceeds window size");
    let window = hann_window(window_size);
    let pad = window_size / 2;
    let n_frames = w.len() / hop + 1;
    let bins = window_size / 2 + 1;
    let fft = FftPlanner::<f32>::new().plan_fft_forward(window_size);
    let samples = w.samples();
    let mut buf = vec![Complex32::new(0.0, 0.0); window_size];
    let mut frames = Vec::with_capacity(n_frames * bins);
    for f in 0..n_frames {
        let start = (f * hop) as isize - pad as isize;
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
        frames.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        frames,
        n_frames,
        bin_count: bins,
        window_size,
        hop_size: hop,
        sample_rate: w.sample_rate(),
        signal_len: w.len(),
    })
}

/// Weighted overlap-add inverse of [`stft`].
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let n = s.window_size;
    ensure!(
        s.bin_count == n / 2 + 1,
        Shape,
        "bin count {} inconsistent with window {}",
        s.bin_count,
        n
    );
    let window = hann_window(n);
    let pad = n / 2;
    let total = s.signal_len + n;
    let mut out = vec![0.0f64; total];
    let mut norm = vec![0.0f64; total];
    let ifft = FftPlanner::<f32>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex32::new(0.0, 0.0); n];
    for f in 0..s.n_frames {
        let frame = s.frame(f);
        buf[..s.bin_count].copy_from_slice(frame);
        for k in s.bin_count..n {
            buf[k] = frame[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = f * s.hop_size;
        for k in 0..n {
            if start + k >= total {
                break;
            }
            let wk = window[k] as f64;
            out[start + k] += buf[k].re as f64 / n as f64 * wk;
            norm[start + k] += wk * wk;
        }
    }
    let samples = (0..s.signal_len)
        .map(|i| {
            let j = i + pad;
            if norm[j] > 1e-8 {
                (out[j] / norm[j]) as f32
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, s.sample_rate)
}
