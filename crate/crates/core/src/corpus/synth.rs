//! Procedural drums + chord pads + sung-melody stand-in.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClipPair, VocalKind};
use crate::audio::{self, Waveform};
use crate::error::{ensure, Result};

/// Stems are rounded to multiples of this so stem sums and differences are
/// exact in `f32`.
pub const STEM_GRID: f32 = 1.0 / (1 << 20) as f32;

pub const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
pub const MINOR_SCALE: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

const MAJOR_PROGRESSION: [usize; 4] = [0, 4, 5, 3]; // I V vi IV
const MINOR_PROGRESSION: [usize; 4] = [0, 5, 2, 6]; // i VI III VII

const VIBRATO_HZ: f64 = 5.5;
const VIBRATO_SEMITONES: f64 = 0.3;
const REST_PROBABILITY: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub tempo_bpm: f64,
    /// 0..12 major keys on C..B, 12..24 minor keys on C..B.
    pub key_index: u8,
    pub duration_s: f64,
    pub seed: u64,
    /// Render the instrumental ~40 dB down (used to plant clips the
    /// training filter must reject).
    #[serde(default)]
    pub quiet_instrumental: bool,
}

impl ClipSpec {
    pub fn new(tempo_bpm: f64, key_index: u8, duration_s: f64, seed: u64) -> Self {
        Self {
            tempo_bpm,
            key_index,
            duration_s,
            seed,
            quiet_instrumental: false,
        }
    }
}

pub fn key_tonic(key_index: u8) -> u8 {
    key_index % 12
}

pub fn key_is_minor(key_index: u8) -> bool {
    key_index >= 12
}

pub fn key_scale(key_index: u8) -> [u8; 7] {
    let scale = if key_is_minor(key_index) {
        MINOR_SCALE
    } else {
        MAJOR_SCALE
    };
    scale.map(|s| (s + key_tonic(key_index)) % 12)
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

/// MIDI pitch of scale degree `degree` (may be negative or exceed 7) above
/// the tonic at `tonic_midi`.
fn degree_to_midi(tonic_midi: i32, minor: bool, degree: i32) -> i32 {
    let scale = if minor { MINOR_SCALE } else { MAJOR_SCALE };
    let octave = degree.div_euclid(7);
    let step = degree.rem_euclid(7) as usize;
    tonic_midi + 12 * octave + scale[step] as i32
}

struct Canvas {
    buf: Vec<f64>,
    sr: f64,
}

impl Canvas {
    fn new(len: usize, sr: u32) -> Self {
        Self {
            buf: vec![0.0; len],
            sr: sr as f64,
        }
    }

    fn index(&self, t: f64) -> usize {
        (t * self.sr).round().max(0.0) as usize
    }
}

fn render_kick(c: &mut Canvas, onset: f64, gain: f64, rng: &mut ChaCha8Rng) {
    let start = c.index(onset);
    let len = c.index(0.35);
    let mut phase = 0.0;
    for i in 0..len {
        let Some(slot) = c.buf.get_mut(start + i) else { break };
        let t = i as f64 / c.sr;
        let freq = 45.0 + 75.0 * (-t / 0.04).exp();
        phase += 2.0 * PI * freq / c.sr;
        let body = phase.sin() * (-t / 0.12).exp();
        let click = rng.gen_range(-1.0..1.0) * (-t / 0.004).exp() * 0.5;
        *slot += gain * (body + click);
    }
}

fn render_snare(c: &mut Canvas, onset: f64, gain: f64, rng: &mut ChaCha8Rng) {
    let start = c.index(onset);
    let len = c.index(0.25);
    for i in 0..len {
        let Some(slot) = c.buf.get_mut(start + i) else { break };
        let t = i as f64 / c.sr;
        let noise = rng.gen_range(-1.0..1.0) * (-t / 0.06).exp();
        let tone = (2.0 * PI * 190.0 * t).sin() * (-t / 0.05).exp() * 0.5;
        *slot += gain * 0.6 * (noise + tone);
    }
}

fn render_hat(c: &mut Canvas, onset: f64, gain: f64, rng: &mut ChaCha8Rng) {
    let start = c.index(onset);
    let len = c.index(0.06);
    let mut prev = 0.0;
    for i in 0..len {
        let Some(slot) = c.buf.get_mut(start + i) else { break };
        let t = i as f64 / c.sr;
        let n: f64 = rng.gen_range(-1.0..1.0);
        // first difference as a crude high-pass
        *slot += gain * 0.25 * (n - prev) * (-t / 0.015).exp();
        prev = n;
    }
}

/// Additive tone between `t0` and `t1` with linear attack/release ramps.
/// Silence outside `[t0, t1)` is exact.
#[allow(clippy::too_many_arguments)]
fn render_tone(
    c: &mut Canvas,
    t0: f64,
    t1: f64,
    freq: f64,
    gain: f64,
    harmonics: usize,
    rolloff: f64,
    vibrato: Option<(f64, f64)>,
    attack: f64,
    release: f64,
    detune: f64,
) {
    let start = c.index(t0);
    let end = c.index(t1).min(c.buf.len());
    if end <= start {
        return;
    }
    let nyquist = c.sr / 2.0;
    let mut phase = 0.0f64;
    for i in start..end {
        let t = (i - start) as f64 / c.sr;
        let dur = (end - start) as f64 / c.sr;
        let env = (t / attack).min(1.0) * ((dur - t) / release).clamp(0.0, 1.0);
        let f = match vibrato {
            Some((rate, depth)) => {
                freq * 2f64.powf(depth * (2.0 * PI * rate * (i as f64 / c.sr)).sin() / 12.0)
            }
            None => freq,
        } * (1.0 + detune);
        phase += 2.0 * PI * f / c.sr;
        let mut v = 0.0;
        for h in 1..=harmonics {
            if f * h as f64 >= nyquist {
                break;
            }
            v += (h as f64 * phase).sin() / (h as f64).powf(rolloff);
        }
        c.buf[i] += gain * env * v;
    }
}

fn quantize(buf: &[f64], sr: u32) -> Waveform {
    let g = STEM_GRID as f64;
    let samples = buf
        .iter()
        .map(|&x| ((x.clamp(-0.95, 0.95) / g).round() * g) as f32)
        .collect();
    Waveform::new(samples, sr).expect("positive sample rate")
}

/// Renders one clip. Deterministic in `spec.seed`.
pub fn generate_clip(spec: &ClipSpec, sample_rate: u32, clip_id: impl Into<String>) -> Result<ClipPair> {
    ensure!(
        (40.0..=200.0).contains(&spec.tempo_bpm),
        Precondition,
        "tempo {} outside [40, 200]",
        spec.tempo_bpm
    );
    ensure!(spec.key_index < 24, Precondition, "key index {} >= 24", spec.key_index);
    ensure!(spec.duration_s > 0.0, Precondition, "duration must be positive");

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let len = (spec.duration_s * sample_rate as f64).round() as usize;
    let beat = 60.0 / spec.tempo_bpm;
    let n_beats = (spec.duration_s / beat).ceil() as usize;
    let minor = key_is_minor(spec.key_index);
    let tonic = key_tonic(spec.key_index) as i32;

    // drums
    let mut drums = Canvas::new(len, sample_rate);
    let kick_gain = rng.gen_range(0.35..0.5);
    for b in 0..n_beats {
        let t = b as f64 * beat;
        render_kick(&mut drums, t, kick_gain, &mut rng);
        if b % 2 == 1 {
            render_snare(&mut drums, t, kick_gain * 0.8, &mut rng);
        }
        render_hat(&mut drums, t + beat / 2.0, kick_gain * 0.5, &mut rng);
    }

    // pads: one chord per bar of four beats
    let mut pads = Canvas::new(len, sample_rate);
    let pad_gain = rng.gen_range(0.025..0.045);
    let progression = if minor {
        MINOR_PROGRESSION
    } else {
        MAJOR_PROGRESSION
    };
    let pad_root = 48 + tonic;
    let bar = 4.0 * beat;
    let n_bars = (spec.duration_s / bar).ceil() as usize;
    for b in 0..n_bars {
        let degree = progression[b % 4] as i32;
        for (v, offset) in [0, 2, 4].into_iter().enumerate() {
            let midi = degree_to_midi(pad_root, minor, degree + offset);
            let detune = [0.0, 0.002, -0.002][v];
            render_tone(
                &mut pads,
                b as f64 * bar,
                (b + 1) as f64 * bar,
                midi_to_hz(midi as f64),
                pad_gain,
                6,
                1.0,
                None,
                0.08,
                0.08,
                detune,
            );
        }
    }

    // melody on an eighth-note grid
    let mut voice = Canvas::new(len, sample_rate);
    let voice_gain = rng.gen_range(0.08..0.14);
    let melody_tonic = if tonic > 6 { 48 + tonic } else { 60 + tonic };
    let eighth = beat / 2.0;
    let n_slots = (spec.duration_s / eighth).ceil() as usize;
    let mut degree: i32 = rng.gen_range(0..5);
    let mut slot = 0;
    while slot < n_slots {
        let length = if rng.gen_bool(0.5) { 1 } else { 2 };
        if !rng.gen_bool(REST_PROBABILITY) {
            let t0 = slot as f64 * eighth;
            let t1 = (slot + length) as f64 * eighth;
            let midi = degree_to_midi(melody_tonic, minor, degree);
            render_tone(
                &mut voice,
                t0,
                t1 - 0.02,
                midi_to_hz(midi as f64),
                voice_gain,
                10,
                1.2,
                Some((VIBRATO_HZ, VIBRATO_SEMITONES)),
                0.03,
                0.04,
                0.0,
            );
        }
        degree = (degree + rng.gen_range(-2..=2)).clamp(-2, 9);
        slot += length;
    }

    let instr_scale = if spec.quiet_instrumental { 0.01 } else { 1.0 };
    let instrumental: Vec<f64> = drums
        .buf
        .iter()
        .zip(&pads.buf)
        .map(|(d, p)| (d + p) * instr_scale)
        .collect();
    let instrumental = quantize(&instrumental, sample_rate);
    let vocal = quantize(&voice.buf, sample_rate);
    let mixture = audio::mix(&vocal, &instrumental)?;
    Ok(ClipPair {
        clip_id: clip_id.into(),
        vocal,
        instrumental,
        mixture,
        vocal_kind: VocalKind::Isolated,
        tempo_bpm: spec.tempo_bpm,
        key_index: spec.key_index,
        duration_s: spec.duration_s,
    })
}
