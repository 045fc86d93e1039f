use std::f32::consts::PI;

use rustfft::num_complex::Complex32;

use crate::audio::{istft, stft, Spectrogram, Waveform};
use crate::error::{ensure, Result};

pub const STRETCH_WINDOW: usize = 1024;
/// 75% overlap.
pub const STRETCH_HOP: usize = STRETCH_WINDOW / 4;
pub const MIN_RATIO: f64 = 0.5;
pub const MAX_RATIO: f64 = 2.0;
/// Frame-energy growth that marks a transient.
const ONSET_RISE: f64 = 2.0;

/// Folds a positive tempo ratio into `[0.5, 2.0]` by octave steps.
pub fn clamp_ratio(ratio: f64) -> Result<f64> {
    ensure!(
        ratio.is_finite() && ratio > 0.0,
        Precondition,
        "tempo ratio must be positive and finite, got {ratio}"
    );
    let mut r = ratio;
    while r < MIN_RATIO {
        r *= 2.0;
    }
    while r > MAX_RATIO {
        r /= 2.0;
    }
    Ok(r)
}

fn wrap(phase: f32) -> f32 {
    phase - 2.0 * PI * ((phase + PI) / (2.0 * PI)).floor()
}

/// Phase-vocoder time-scale modification: tempo scales by `ratio`, pitch is
/// kept and the output lasts `len / ratio` samples (rounded). Ratio 1.0
/// returns the input unchanged. Synthesis phases are reset to the analysis
/// phases at transients so onsets keep their position within the frame.
pub fn time_stretch(w: &Waveform, ratio: f64) -> Result<Waveform> {
    ensure!(
        (MIN_RATIO..=MAX_RATIO).contains(&ratio),
        Precondition,
        "stretch ratio {ratio} outside [{MIN_RATIO}, {MAX_RATIO}]"
    );
    if ratio == 1.0 {
        return Ok(w.clone());
    }
    let spec = stft(w, STRETCH_WINDOW, STRETCH_HOP)?;
    let out_len = (w.len() as f64 / ratio).round() as usize;
    let n_out = out_len / STRETCH_HOP + 1;
    let bins = spec.bin_count;
    let last = spec.n_frames - 1;
    let expected: Vec<f32> = (0..bins)
        .map(|b| 2.0 * PI * (b * STRETCH_HOP) as f32 / STRETCH_WINDOW as f32)
        .collect();
    let energy: Vec<f64> = (0..spec.n_frames)
        .map(|i| spec.frame(i).iter().map(|c| c.norm_sqr() as f64).sum())
        .collect();
    let floor = 1e-6 * energy.iter().cloned().fold(0.0, f64::max);
    let onset = |i: usize| i > 0 && energy[i] > floor && energy[i] > ONSET_RISE * energy[i - 1];
    let mut phase: Vec<f32> = spec.frame(0).iter().map(|c| c.arg()).collect();
    let mut last_reset = 0;
    let mut frames = Vec::with_capacity(n_out * bins);
    for k in 0..n_out {
        let pos = k as f64 * ratio;
        let i = (pos.floor() as usize).min(last);
        let j = (i + 1).min(last);
        let frac = if i == last { 0.0 } else { (pos - i as f64) as f32 };
        let (a, b) = (spec.frame(i), spec.frame(j));
        let nearest = (pos.round() as usize).min(last);
        if onset(nearest) && nearest != last_reset {
            for (p, c) in phase.iter_mut().zip(spec.frame(nearest)) {
                *p = c.arg();
            }
            last_reset = nearest;
        }
        for bin in 0..bins {
            let mag = (1.0 - frac) * a[bin].norm() + frac * b[bin].norm();
            frames.push(Complex32::from_polar(mag, phase[bin]));
            let dev = wrap(b[bin].arg() - a[bin].arg() - expected[bin]);
            phase[bin] += expected[bin] + dev;
        }
    }
    istft(&Spectrogram {
        frames,
        n_frames: n_out,
        bin_count: bins,
        window_size: STRETCH_WINDOW,
        hop_size: STRETCH_HOP,
        sample_rate: w.sample_rate(),
        signal_len: out_len,
    })
}
