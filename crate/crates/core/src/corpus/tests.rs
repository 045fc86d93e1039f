use super::*;
use crate::audio::{self, correlation, db_to_amplitude, snr_db, Waveform};

fn clip(tempo: f64, key: u8, seconds: f64, seed: u64) -> ClipPair {
    generate_clip(&ClipSpec::new(tempo, key, seconds, seed), 16000, "c").unwrap()
}

fn constant(level_db: f64, seconds: f64) -> Waveform {
    let a = db_to_amplitude(level_db) as f32;
    Waveform::new(vec![a; (seconds * 16000.0) as usize], 16000).unwrap()
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(clip(100.0, 5, 3.0, 77), clip(100.0, 5, 3.0, 77));
    assert_ne!(clip(100.0, 5, 3.0, 77).vocal, clip(100.0, 5, 3.0, 78).vocal);
}

#[test]
fn mixture_is_exact_sum_of_stems() {
    let c = clip(133.0, 17, 4.0, 3);
    assert_eq!(audio::mix(&c.vocal, &c.instrumental).unwrap(), c.mixture);
    let residual = audio::subtract(&audio::subtract(&c.mixture, &c.vocal).unwrap(), &c.instrumental).unwrap();
    assert!(residual.samples().iter().all(|&s| s == 0.0));
    assert_eq!(c.vocal.len(), 64000);
    assert_eq!(c.instrumental.len(), c.mixture.len());
}

#[test]
fn rejects_out_of_range_specs() {
    assert!(generate_clip(&ClipSpec::new(30.0, 0, 1.0, 0), 16000, "x").is_err());
    assert!(generate_clip(&ClipSpec::new(120.0, 24, 1.0, 0), 16000, "x").is_err());
}

#[test]
fn kicks_fall_on_the_beat_grid() {
    let c = clip(120.0, 0, 10.0, 11);
    let s = c.instrumental.samples();
    let energy = |t0: f64, t1: f64| -> f64 {
        let (a, b) = ((t0 * 16000.0) as usize, (t1 * 16000.0) as usize);
        s[a..b].iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / (b - a) as f64
    };
    let beats: Vec<f64> = (0..20).map(|b| b as f64 * 0.5).collect();
    assert_eq!(beats.len(), 20);
    for &t in &beats[1..] {
        let onset = energy(t, t + 0.03);
        let before = energy(t - 0.03, t);
        assert!(onset > 2.0 * before, "no onset at {t}: {onset} vs {before}");
    }
}

/// Autocorrelation f0 over a 40 ms frame, searched between 80 and 1000 Hz.
fn acf_f0(frame: &[f32], sr: f64) -> f64 {
    let min_lag = (sr / 1000.0) as usize;
    let max_lag = (sr / 80.0) as usize;
    let acf = |lag: usize| -> f64 {
        frame[..frame.len() - lag]
            .iter()
            .zip(&frame[lag..])
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum()
    };
    let r0 = acf(0);
    // first lag whose normalized ACF is within 10% of the global maximum
    let vals: Vec<f64> = (min_lag..max_lag).map(|l| acf(l) / r0).collect();
    let best = vals.iter().cloned().fold(f64::MIN, f64::max);
    let mut lag = min_lag;
    for (i, v) in vals.iter().enumerate() {
        let l = min_lag + i;
        if *v >= 0.9 * best && (i == 0 || vals[i - 1] <= *v) && vals.get(i + 1).is_none_or(|n| n <= v) {
            lag = l;
            break;
        }
    }
    sr / lag as f64
}

#[test]
fn melody_stays_in_key() {
    for seed in 0..3 {
        let c = clip(100.0, 0, 10.0, seed);
        let scale = key_scale(0);
        let s = c.vocal.samples();
        let frame_len = 640;
        let mut checked = 0;
        for start in (0..s.len() - frame_len).step_by(1600) {
            let frame = &s[start..start + frame_len];
            let rms = (frame.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / frame_len as f64).sqrt();
            // only fully voiced frames
            if rms < 0.03 || frame.iter().take(32).all(|&x| x == 0.0) || frame.iter().rev().take(32).all(|&x| x == 0.0) {
                continue;
            }
            let f0 = acf_f0(frame, 16000.0);
            let midi = (69.0 + 12.0 * (f0 / 440.0).log2()).round() as i32;
            let pc = midi.rem_euclid(12) as u8;
            assert!(scale.contains(&pc), "seed {seed}: f0 {f0:.1} Hz -> pc {pc}");
            checked += 1;
        }
        assert!(checked > 10, "only {checked} voiced frames");
    }
}

#[test]
fn minor_key_scale_layout() {
    // A minor (index 21) shares C major's pitch classes
    let mut a: Vec<u8> = key_scale(21).to_vec();
    let mut c: Vec<u8> = key_scale(0).to_vec();
    a.sort();
    c.sort();
    assert_eq!(a, c);
    assert!(key_is_minor(21));
    assert_eq!(key_tonic(21), 9);
}

#[test]
fn separation_without_instrumental_recovers_vocal() {
    let mut c = clip(110.0, 3, 3.0, 5);
    c.instrumental = Waveform::zeros(c.vocal.len(), 16000);
    c.mixture = c.vocal.clone();
    let out = separate_vocals(&c.mixture, &c, f64::NEG_INFINITY).unwrap();
    assert!(snr_db(c.vocal.samples(), out.samples()) >= 20.0);
    // silent instrumental: nothing to leak even at a finite bleed level
    let masked = wiener_masked_vocal(&c.mixture, &c).unwrap();
    let leaky = separate_vocals(&c.mixture, &c, -45.0).unwrap();
    assert_eq!(leaky, masked);
}

#[test]
fn bleed_level_matches_request() {
    let c = clip(120.0, 9, 4.0, 8);
    let masked = wiener_masked_vocal(&c.mixture, &c).unwrap();
    let out = separate_vocals(&c.mixture, &c, -45.0).unwrap();
    let bleed = audio::subtract(&out, &masked).unwrap();
    let got = audio::amplitude_to_db(bleed.rms());
    let want = audio::amplitude_to_db(c.instrumental.rms()) - 45.0;
    assert!((got - want).abs() <= 2.0, "{got} vs {want}");
}

#[test]
fn separation_energy_sanity() {
    for seed in 0..3 {
        let c = clip(95.0, 14, 4.0, seed);
        let out = separate_vocals(&c.mixture, &c, -45.0).unwrap();
        let out_db = audio::amplitude_to_db(out.rms());
        let mix_db = audio::amplitude_to_db(c.mixture.rms());
        assert!(out_db <= mix_db + 3.0);
    }
}

#[test]
fn separation_rejects_bad_inputs() {
    let c = clip(120.0, 0, 1.0, 0);
    let short = Waveform::zeros(100, 16000);
    assert!(matches!(separate_vocals(&short, &c, -45.0), Err(crate::Error::Shape(_))));
    assert!(separate_vocals(&c.mixture, &c, 3.0).is_err());
}

#[test]
fn derived_instrumental_algebra() {
    let c = clip(120.0, 2, 3.0, 21);
    assert_eq!(derive_instrumental(&c.mixture, &c.vocal).unwrap(), c.instrumental);
    let zeros = derive_instrumental(&c.mixture, &c.mixture).unwrap();
    assert!(zeros.samples().iter().all(|&s| s == 0.0));
    let sep = separate_vocals(&c.mixture, &c, -45.0).unwrap();
    let instr = derive_instrumental(&c.mixture, &sep).unwrap();
    assert!(correlation(instr.samples(), c.instrumental.samples()) >= 0.99);
    assert!(derive_instrumental(&c.mixture, &Waveform::zeros(5, 16000)).is_err());
}

#[test]
fn separated_minus_isolated_is_bleed_in_vocal_rests() {
    let c = clip(120.0, 4, 6.0, 13);
    let sep = separate_vocals(&c.mixture, &c, -45.0).unwrap();
    let diff = audio::subtract(&sep, &c.vocal).unwrap();
    // samples far from any vocal energy: the mask is exactly zero there
    let v = c.vocal.samples();
    let rest: Vec<usize> = (1024..v.len() - 1024)
        .filter(|&i| v[i - 1024..i + 1024].iter().all(|&x| x == 0.0))
        .collect();
    assert!(rest.len() > 1000, "clip has no rests");
    let rms = |idx: &[usize], s: &[f32]| -> f64 {
        (idx.iter().map(|&i| (s[i] as f64).powi(2)).sum::<f64>() / idx.len() as f64).sqrt()
    };
    let diff_db = audio::amplitude_to_db(rms(&rest, diff.samples()));
    let instr_db = audio::amplitude_to_db(rms(&rest, c.instrumental.samples()));
    assert!((diff_db - (instr_db - 45.0)).abs() <= 3.0, "{diff_db} vs {instr_db}");
}

#[test]
fn filter_thresholds() {
    let d = filter_decision(-10.0, -30.0);
    assert_eq!(d, FilterDecision { keep: false, reason: FilterReason::SilentInstrumental });
    let d = filter_decision(-10.0, -16.0);
    assert_eq!(d, FilterDecision { keep: false, reason: FilterReason::VocalsTooLoud });
    let d = filter_decision(-10.0, -12.0);
    assert_eq!(d, FilterDecision { keep: true, reason: FilterReason::None });
    // strict boundaries
    assert!(filter_decision(-30.0, -25.0).keep);
    assert!(!filter_decision(-15.0, -20.0).keep);
}

#[test]
fn filter_on_waveforms() {
    let d = filter_clip(&constant(-40.0, 1.0), &constant(-30.0, 1.0)).unwrap();
    assert_eq!(d.reason, FilterReason::SilentInstrumental);
    let d = filter_clip(&constant(-10.0, 1.0), &constant(-16.0, 1.0)).unwrap();
    assert_eq!(d.reason, FilterReason::VocalsTooLoud);
    let d = filter_clip(&constant(-10.0, 1.0), &constant(-12.0, 1.0)).unwrap();
    assert!(d.keep);
}

#[test]
fn eval_selection() {
    let mut loud = clip(120.0, 0, 2.0, 1);
    loud.vocal = constant(-20.0, 2.0);
    let mut silent = loud.clone();
    silent.vocal = Waveform::zeros(32000, 16000);
    let kept = select_eval_clips(vec![loud.clone(), silent]).unwrap();
    assert_eq!(kept, vec![loud]);
    assert!(!vocal_presence(-25.0));
    assert!(vocal_presence(-24.99));
}

fn small_config(seed: u64) -> CorpusConfig {
    CorpusConfig {
        n_train: 6,
        n_eval: 3,
        n_dev: 2,
        seed,
        duration_s: 2.0,
        ..CorpusConfig::default()
    }
}

#[test]
fn corpus_build_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = build_corpus(&small_config(4), a.path()).unwrap();
    let mb = build_corpus(&small_config(4), b.path()).unwrap();
    let bytes_a = std::fs::read(a.path().join("manifest.jsonl")).unwrap();
    let bytes_b = std::fs::read(b.path().join("manifest.jsonl")).unwrap();
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(ma, mb);
    assert_eq!(CorpusManifest::load(a.path()).unwrap(), ma);

    assert_eq!(ma.entries.len(), 11);
    assert_eq!((ma.eval().count(), ma.dev().count()), (3, 2));
    let ids: std::collections::HashSet<_> = ma.entries.iter().map(|e| &e.clip_id).collect();
    assert_eq!(ids.len(), 11);
    for e in &ma.entries {
        match e.split {
            Split::Train => {
                assert_eq!(e.vocal_kind, VocalKind::Separated);
                assert!(e.stems.contains_key(&StemKind::VocalSep));
            }
            Split::Eval | Split::Dev => {
                assert!(!e.filtered);
                for k in [StemKind::Vocal, StemKind::Instr, StemKind::Mix, StemKind::VocalSep, StemKind::InstrSep] {
                    assert!(e.stem_path(a.path(), k).unwrap().exists());
                }
            }
        }
        // filter decisions are reproducible from recorded levels
        if e.split == Split::Train {
            let d = filter_decision(e.vocal_peak_db, e.instrumental_peak_db);
            assert_eq!(d.keep, !e.filtered);
            assert_eq!(d.reason, e.filter_reason);
        }
    }
}

#[test]
fn planted_quiet_clips_are_filtered_unless_disabled() {
    let dir = tempfile::tempdir().unwrap();
    let config = CorpusConfig {
        n_train: 8,
        quiet_instrumental_fraction: 0.5,
        ..small_config(9)
    };
    let m = build_corpus(&config, dir.path()).unwrap();
    let filtered: Vec<_> = m.entries.iter().filter(|e| e.filtered).collect();
    assert!(!filtered.is_empty());
    assert!(filtered.iter().all(|e| e.filter_reason == FilterReason::SilentInstrumental));

    let dir2 = tempfile::tempdir().unwrap();
    let m2 = build_corpus(&CorpusConfig { apply_filter: false, ..config }, dir2.path()).unwrap();
    assert_eq!(m2.entries.iter().filter(|e| e.filtered).count(), 0);
}

#[test]
fn typical_clips_pass_the_filters() {
    let mut kept = 0;
    for seed in 0..20 {
        let c = clip(70.0 + 4.0 * seed as f64, (seed % 24) as u8, 4.0, seed);
        if filter_clip(&c.vocal, &c.instrumental).unwrap().keep && vocals_present(&c.vocal).unwrap() {
            kept += 1;
        }
    }
    assert!(kept >= 17, "{kept}/20");
}
