use super::Waveform;
use crate::error::{ensure, Result};

/// Zero crossings of the sinc kernel on each side of the output instant.
const HALF_TAPS: f64 = 32.0;

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    let t = std::f64::consts::PI * (x + 1.0);
    0.42 - 0.5 * t.cos() + 0.08 * (2.0 * t).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited windowed-sinc resampling. Output length is
/// `round(len * target / source)`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    ensure!(target_rate > 0, Precondition, "target rate must be positive");
    let source_rate = w.sample_rate();
    if source_rate == target_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / source_rate as f64;
    let out_len = (w.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS / cutoff;
    let x = w.samples();
    let samples = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = ((t - half_width).ceil().max(0.0)) as usize;
            let hi = ((t + half_width).floor() as isize).min(x.len() as isize - 1);
            let mut acc = 0.0f64;
            if hi >= lo as isize {
                for (k, &xk) in x.iter().enumerate().take(hi as usize + 1).skip(lo) {
                    let d = t - k as f64;
                    acc += xk as f64 * cutoff * sinc(cutoff * d) * blackman(d / half_width);
                }
            }
            acc as f32
        })
        .collect();
    Waveform::new(samples, target_rate)
}
