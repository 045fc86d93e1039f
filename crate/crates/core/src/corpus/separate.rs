use super::ClipPair;
use crate::audio::{self, db_to_amplitude, istft, stft, Waveform};
use crate::error::{ensure, Result};

const MASK_WINDOW: usize = 1024;
const MASK_HOP: usize = 256;

/// Oracle soft mask `|V|^2 / (|V|^2 + |I|^2)` applied to the mixture STFT.
pub fn wiener_masked_vocal(mixture: &Waveform, oracle: &ClipPair) -> Result<Waveform> {
    ensure!(
        mixture.len() == oracle.vocal.len() && mixture.len() == oracle.instrumental.len(),
        Shape,
        "mixture has {} samples, oracle stems {} / {}",
        mixture.len(),
        oracle.vocal.len(),
        oracle.instrumental.len()
    );
    let v = stft(&oracle.vocal, MASK_WINDOW, MASK_HOP)?;
    let i = stft(&oracle.instrumental, MASK_WINDOW, MASK_HOP)?;
    let mut x = stft(mixture, MASK_WINDOW, MASK_HOP)?;
    for ((xm, vm), im) in x.frames.iter_mut().zip(&v.frames).zip(&i.frames) {
        let pv = vm.norm_sqr();
        let pi = im.norm_sqr();
        let mask = if pv + pi > 0.0 { pv / (pv + pi) } else { 0.0 };
        *xm *= mask;
    }
    istft(&x)
}

/// Imperfect vocal estimate: the oracle Wiener mask plus a copy of the
/// instrumental attenuated by `leakage_db` (use `f64::NEG_INFINITY` for no
/// bleed).
pub fn separate_vocals(mixture: &Waveform, oracle: &ClipPair, leakage_db: f64) -> Result<Waveform> {
    ensure!(
        leakage_db < 0.0,
        Precondition,
        "leakage must be negative dB, got {leakage_db}"
    );
    let mut est = wiener_masked_vocal(mixture, oracle)?;
    let g = db_to_amplitude(leakage_db) as f32;
    if g > 0.0 {
        for (e, &s) in est.samples_mut().iter_mut().zip(oracle.instrumental.samples()) {
            *e += g * s;
        }
    }
    Ok(est)
}

/// Source-separated instrumental: `mixture - separated_vocals`.
pub fn derive_instrumental(mixture: &Waveform, separated_vocals: &Waveform) -> Result<Waveform> {
    audio::subtract(mixture, separated_vocals)
}
