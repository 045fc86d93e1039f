use crate::audio::{stft, Waveform};
use crate::error::{ensure, Result};

pub const ONSET_RATE_HZ: f64 = 100.0;
pub const MIN_TEMPO_BPM: f64 = 40.0;
pub const MAX_TEMPO_BPM: f64 = 200.0;
const ONSET_WINDOW: usize = 1024;
const MIN_TEMPO_DURATION_S: f64 = 5.0;
/// Hann kernel length for envelope smoothing, in envelope frames.
const SMOOTHING: usize = 7;

/// Half-wave-rectified spectral flux of the power spectrum, one value per
/// 10 ms, smoothed with a short Hann kernel.
pub fn onset_envelope(w: &Waveform) -> Result<Vec<f64>> {
    let hop = (w.sample_rate() as f64 / ONSET_RATE_HZ).round() as usize;
    ensure!(hop > 0, Precondition, "sample rate too low for a 100 Hz envelope");
    let spec = stft(w, ONSET_WINDOW, hop)?;
    let mut prev: Vec<f64> = vec![0.0; spec.bin_count];
    let mut env = Vec::with_capacity(spec.n_frames);
    for f in 0..spec.n_frames {
        let mut flux = 0.0;
        for (p, x) in prev.iter_mut().zip(spec.frame(f)) {
            let m = x.norm_sqr() as f64;
            if f > 0 {
                flux += (m - *p).max(0.0);
            }
            *p = m;
        }
        env.push(flux);
    }
    Ok(smooth(&env))
}

fn smooth(x: &[f64]) -> Vec<f64> {
    let kernel: Vec<f64> = (0..SMOOTHING)
        .map(|i| (std::f64::consts::PI * (i + 1) as f64 / (SMOOTHING + 1) as f64).sin().powi(2))
        .collect();
    let total: f64 = kernel.iter().sum();
    let half = SMOOTHING / 2;
    (0..x.len())
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(k, w)| (i + k).checked_sub(half).and_then(|j| x.get(j)).map(|v| v * w))
                .sum::<f64>()
                / total
        })
        .collect()
}

/// Tempo from the lag maximizing the autocorrelation of the mean-removed
/// onset envelope within 40-200 BPM, refined by parabolic interpolation.
pub fn tempo_from_envelope(env: &[f64], rate_hz: f64) -> Result<f64> {
    let min_lag = (60.0 * rate_hz / MAX_TEMPO_BPM).floor() as usize;
    let max_lag = (60.0 * rate_hz / MIN_TEMPO_BPM).ceil() as usize;
    ensure!(env.len() > max_lag + 1, Precondition, "onset envelope too short");
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    let x: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    ensure!(energy > 1e-9 * env.len() as f64, Precondition, "flat onset envelope: no rhythm");
    let acf = |lag: usize| -> f64 { x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum() };
    let values: Vec<f64> = (min_lag - 1..=max_lag + 1).map(acf).collect();
    let at = |lag: usize| values[lag + 1 - min_lag];
    let mut best = min_lag;
    for lag in min_lag..=max_lag {
        if at(lag) > at(best) {
            best = lag;
        }
    }
    let (l, c, r) = (at(best - 1), at(best), at(best + 1));
    let denom = l - 2.0 * c + r;
    let shift = if denom < 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let lag_s = (best as f64 + shift) / rate_hz;
    Ok((60.0 / lag_s).clamp(MIN_TEMPO_BPM, MAX_TEMPO_BPM))
}

/// Global tempo of a clip of at least 5 s.
pub fn estimate_tempo(w: &Waveform) -> Result<f64> {
    ensure!(
        w.duration_s() >= MIN_TEMPO_DURATION_S,
        Precondition,
        "tempo estimation needs at least {MIN_TEMPO_DURATION_S} s, got {:.3} s",
        w.duration_s()
    );
    let rate = w.sample_rate() as f64 / (w.sample_rate() as f64 / ONSET_RATE_HZ).round();
    tempo_from_envelope(&onset_envelope(w)?, rate)
}
