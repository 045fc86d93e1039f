use std::ops::Range;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tokens::{semantic_range, Schedule, VOCAB_SIZE};

const V: usize = 20;

fn tiny(kind: ModelKind, positional: Positional) -> ModelConfig {
    ModelConfig {
        kind,
        vocab_size: V,
        d_model: 8,
        n_layers_enc: 1,
        n_layers_dec: 1,
        n_heads: 2,
        d_ff: 12,
        dropout: 0.0,
        positional,
        max_len: 64,
        rel_buckets: 8,
        rel_max_distance: 16,
        zero_init_output: false,
    }
}

/// Alternating subsets `0..6` and `6..18`; ids 18 and 19 are SOS and PAD.
fn tiny_ranges(n: usize) -> Vec<Range<u32>> {
    (0..n).map(|i| if i % 2 == 0 { 0..6 } else { 6..18 }).collect()
}

struct Owned {
    input: Vec<u16>,
    target: Vec<u16>,
    ranges: Vec<Range<u32>>,
    loss_from: usize,
}

impl Owned {
    fn ex(&self) -> Example<'_> {
        Example {
            input: &self.input,
            target: &self.target,
            ranges: &self.ranges,
            loss_from: self.loss_from,
        }
    }

    fn train(&self) -> TrainExample {
        TrainExample {
            input: self.input.clone(),
            target: self.target.clone(),
            ranges: self.ranges.clone(),
            loss_from: self.loss_from,
        }
    }
}

fn random_example(seed: u64, n_in: usize, n_tgt: usize, loss_from: usize) -> Owned {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = tiny_ranges(n_tgt);
    Owned {
        input: (0..n_in).map(|_| rng.gen_range(0..18)).collect(),
        target: ranges.iter().map(|r| rng.gen_range(r.clone()) as u16).collect(),
        ranges,
        loss_from,
    }
}

fn params_f64(net: &Net, seed: u64) -> Vec<f64> {
    let mut p: Vec<f64> = net.layout.init(seed);
    // relative tables start at zero; perturb them so their gradient path is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for name in ["enc.rel", "dec.rel"] {
        if let Some(t) = net.layout.tensor(name) {
            p[t.offset..t.offset + t.numel()].iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
    }
    p
}

fn loss_of(net: &Net, p: &[f64], ex: &Example, mode: LossMode, dropout: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut drop = Dropout { p: dropout, rng: &mut rng };
    let nll = match grad {
        Some(g) => net.loss_and_grad(p, g, ex, mode, 1.0, Some(&mut drop)),
        None => {
            let fw = net.forward(p, ex.input, ex.target, Some(&mut drop));
            net.output_loss(p, None, &fw.hidden, ex, mode, 1.0).0
        }
    };
    nll.iter().sum()
}

/// Central differences at `eps = 1e-4` on 32 sampled entries of every tensor
/// whose name contains one of `groups`.
fn gradient_check(cfg: ModelConfig, mode: LossMode, dropout: f64, groups: &[&str]) {
    let net = Net::new(cfg);
    let mut p = params_f64(&net, 5);
    let o = random_example(11, 7, 9, 2);
    let ex = o.ex();
    let mut g = vec![0.0; p.len()];
    loss_of(&net, &p, &ex, mode, dropout, Some(&mut g));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let eps = 1e-4;
    for group in groups {
        let pool: Vec<usize> = net
            .layout
            .tensors
            .iter()
            .filter(|t| t.name.contains(group))
            .flat_map(|t| t.offset..t.offset + t.numel())
            .collect();
        assert!(!pool.is_empty(), "no tensors match {group}");
        for _ in 0..32 {
            let i = pool[rng.gen_range(0..pool.len())];
            let keep = p[i];
            p[i] = keep + eps;
            let up = loss_of(&net, &p, &ex, mode, dropout, None);
            p[i] = keep - eps;
            let down = loss_of(&net, &p, &ex, mode, dropout, None);
            p[i] = keep;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-7);
            assert!(rel <= 1e-3, "{group}[{i}]: analytic {} numeric {numeric} rel {rel}", g[i]);
        }
    }
}

#[test]
fn gradient_check_encoder_decoder_sinusoidal() {
    let groups = ["embed", ".attn.", ".self.", ".cross.", ".ff1", ".ff2", ".ln", ".norm", "out"];
    gradient_check(tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal), LossMode::Full, 0.0, &groups);
    gradient_check(tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal), LossMode::Masked, 0.0, &groups);
}

#[test]
fn gradient_check_relative_positions_with_dropout() {
    let groups = ["enc.rel", "dec.rel", "embed", ".attn.", ".self.", ".cross.", ".ff1", "out"];
    gradient_check(tiny(ModelKind::EncoderDecoder, Positional::Relative), LossMode::Masked, 0.2, &groups);
}

#[test]
fn gradient_check_decoder_only() {
    let mut cfg = tiny(ModelKind::DecoderOnly, Positional::Relative);
    cfg.n_layers_dec = 2;
    gradient_check(cfg, LossMode::Full, 0.0, &["dec.rel", "embed", ".self.", ".ff2", ".ln", "out"]);
}

#[test]
fn uniform_logits_give_log_vocab_nll() {
    let cfg = ModelConfig {
        d_model: 16,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ff: 32,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, 0).unwrap();
    let schedule = Schedule::target(25, 50);
    let ranges = schedule.ranges();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let target: Vec<u16> = ranges.iter().map(|r| rng.gen_range(r.clone()) as u16).collect();
    let input: Vec<u16> = (0..75).map(|_| rng.gen_range(0..VOCAB_SIZE as u16 - 2)).collect();
    let ex = Example {
        input: &input,
        target: &target,
        ranges: &ranges,
        loss_from: 0,
    };
    for nll in model.nll_per_position(&ex, LossMode::Full).unwrap() {
        assert!((nll - (VOCAB_SIZE as f64).ln()).abs() < 0.01);
    }
    for nll in model.nll_per_position(&ex, LossMode::Masked).unwrap() {
        assert!((nll - 1024f64.ln()).abs() < 0.01);
    }
    assert_eq!(semantic_range().len(), 1024);
}

#[test]
fn parameter_count_matches_formula() {
    let mut configs = vec![ModelConfig::default(), ModelConfig::stage3()];
    for kind in [ModelKind::EncoderDecoder, ModelKind::DecoderOnly] {
        for pos in [Positional::FixedSinusoidal, Positional::Relative] {
            let mut c = tiny(kind, pos);
            c.n_layers_enc = 3;
            c.n_layers_dec = 2;
            configs.push(c);
        }
    }
    for c in configs {
        let m = Model::new(c.clone(), 0).unwrap();
        assert_eq!(m.param_count(), analytic_param_count(&c), "{c:?}");
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn causal_masking_hides_future_targets() {
    for pos in [Positional::FixedSinusoidal, Positional::Relative] {
        let net = Net::new(tiny(ModelKind::EncoderDecoder, pos));
        let p = params_f64(&net, 2);
        let o = random_example(3, 6, 10, 0);
        let base = net.logits(&p, &o.input, &o.target);
        for t in 0..10 {
            let mut changed = o.target.clone();
            changed[t] = if changed[t] == 5 { 4 } else { 5 };
            let l = net.logits(&p, &o.input, &changed);
            // target t feeds decoder position t + 1
            assert_close(&l[..(t + 1) * V], &base[..(t + 1) * V], 1e-12);
            if t + 1 < 10 {
                assert!(l[(t + 1) * V..].iter().zip(&base[(t + 1) * V..]).any(|(a, b)| (a - b).abs() > 1e-9));
            }
        }
    }
}

#[test]
fn cached_decoding_matches_teacher_forcing() {
    for kind in [ModelKind::EncoderDecoder, ModelKind::DecoderOnly] {
        for pos in [Positional::FixedSinusoidal, Positional::Relative] {
            let mut cfg = tiny(kind, pos);
            cfg.n_layers_dec = 2;
            let net = Net::new(cfg);
            let p = params_f64(&net, 4);
            let o = random_example(5, if kind == ModelKind::DecoderOnly { 0 } else { 5 }, 12, 0);
            let full = net.logits(&p, &o.input, &o.target);
            let mut st = net.start_decode(&p, &o.input);
            let mut prev = net.sos();
            for (t, &tok) in o.target.iter().enumerate() {
                let h = net.decode_step(&p, &mut st, prev);
                let l = net.subset_logits(&p, &h, &(0..V as u32));
                assert_close(&l, &full[t * V..(t + 1) * V], 1e-10);
                prev = tok;
            }
            assert_eq!(st.position(), 12);
        }
    }
}

#[test]
fn encoder_input_changes_decoder_logits() {
    let net = Net::new(tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal));
    let p = params_f64(&net, 6);
    let o = random_example(7, 8, 6, 0);
    let base = net.logits(&p, &o.input, &o.target);
    let mut shuffled = o.input.clone();
    shuffled.reverse();
    shuffled[0] = (shuffled[0] + 1) % 18;
    let l = net.logits(&p, &shuffled, &o.target);
    let change = l.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(change > 0.0);
}

#[test]
fn loss_ignores_labels_before_loss_from() {
    let net = Net::new(tiny(ModelKind::DecoderOnly, Positional::FixedSinusoidal));
    let p = params_f64(&net, 8);
    let o = random_example(9, 0, 10, 4);
    let fw = net.forward(&p, &o.input, &o.target, None);
    let (a, _) = net.output_loss(&p, None, &fw.hidden, &o.ex(), LossMode::Masked, 1.0);
    let mut labels = o.target.clone();
    labels[..4].iter_mut().zip(&o.ranges).for_each(|(t, r)| *t = (r.end - 1) as u16);
    let ex = Example {
        target: &labels,
        ..o.ex()
    };
    let (b, _) = net.output_loss(&p, None, &fw.hidden, &ex, LossMode::Masked, 1.0);
    assert_eq!(a, b);
    assert!(a[..4].iter().all(|&x| x == 0.0));
    // nothing to learn when every position is masked out
    let none = Example { loss_from: 10, ..o.ex() };
    let mut g = vec![0.0; p.len()];
    net.loss_and_grad(&p, &mut g, &none, LossMode::Full, 1.0, None);
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn eval_is_deterministic_and_dropout_only_applies_in_training() {
    let mut cfg = tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal);
    cfg.dropout = 0.1;
    let model = Model::new(cfg, 1).unwrap();
    let o = random_example(2, 6, 8, 0);
    let a = model.nll(&o.ex(), LossMode::Full).unwrap();
    let b = model.nll(&o.ex(), LossMode::Full).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut drop = Dropout { p: 0.1, rng: &mut rng };
    let mut g = vec![0.0f32; model.param_count()];
    let train: f64 = model
        .net
        .loss_and_grad(&model.params, &mut g, &o.ex(), LossMode::Full, 1.0, Some(&mut drop))
        .iter()
        .sum::<f64>()
        / 8.0;
    assert_ne!(train, a);
}

#[test]
fn overlength_sequences_are_rejected() {
    let model = Model::new(tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal), 0).unwrap();
    let o = random_example(0, 65, 4, 0);
    assert!(matches!(model.nll(&o.ex(), LossMode::Full), Err(Error::Precondition(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal);
    c.n_heads = 3;
    assert!(matches!(Model::new(c.clone(), 0), Err(Error::Config(_))));
    c.n_heads = 2;
    c.dropout = 1.0;
    assert!(matches!(Model::new(c, 0), Err(Error::Config(_))));
}

#[test]
fn masked_distribution_has_no_mass_outside_the_subset() {
    let logits = [0.3f32, -1.0, 2.0, 0.0];
    let probs = masked_distribution(&logits, &(6..10), 20, 0.85);
    assert!(probs[..6].iter().chain(&probs[10..]).all(|&x| x == 0.0));
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn low_temperature_sampling_converges_to_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for trial in 0..200 {
        let logits: Vec<f32> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let range = 100..116;
        let greedy = sample_from(&logits, &range, 0.0, &mut rng);
        let cold = sample_from(&logits, &range, 1e-4, &mut rng);
        assert_eq!(greedy, cold, "trial {trial}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn sampled_tokens_stay_in_their_subsets(seed in 0u64..1000, temp in 0.1f64..3.0) {
        let net = Net::new(tiny(ModelKind::EncoderDecoder, Positional::Relative));
        let p: Vec<f32> = net.layout.init(seed);
        let o = random_example(seed, 5, 30, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = net.generate(&p, &o.input, &o.ranges, temp, &mut rng, |_| StepRule::Sample);
        prop_assert_eq!(out.len(), 30);
        for (t, r) in out.iter().zip(&o.ranges) {
            prop_assert!(r.contains(&(*t as u32)));
        }
    }
}

#[test]
fn generation_is_deterministic_in_the_seed_and_honours_forced_tokens() {
    let net = Net::new(tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal));
    let p: Vec<f32> = net.layout.init(3);
    let o = random_example(4, 5, 20, 0);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.generate(&p, &o.input, &o.ranges, 0.85, &mut rng, |pos| {
            if pos < 3 {
                StepRule::Force(o.target[pos])
            } else {
                StepRule::Sample
            }
        })
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(&a[..3], &o.target[..3]);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = Model::new(tiny(ModelKind::EncoderDecoder, Positional::Relative), 3).unwrap();
    m.step = 42;
    m.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(back.step, 42);
    assert_eq!(back.config(), m.config());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Model::load(&path), Err(Error::Checkpoint(_))));
    std::fs::write(&path, b"nope").unwrap();
    assert!(matches!(Model::load(&path), Err(Error::Checkpoint(_))));
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        steps: 400,
        schedule: LrSchedule {
            peak_lr: 1e-2,
            warmup_steps: 50,
        },
        seed: 3,
        eval_every: 100,
        ..TrainConfig::default()
    }
}

#[test]
fn training_overfits_a_tiny_batch_and_is_reproducible() {
    let mut cfg = tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal);
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.zero_init_output = true;
    let data: Vec<TrainExample> = (0..2).map(|s| random_example(s, 6, 12, 0).train()).collect();
    let run = || {
        let mut m = Model::new(cfg.clone(), 0).unwrap();
        let mut evals = Vec::new();
        let out = train(&mut m, &data, &overfit_config(), |model, step| {
            evals.push(step);
            let nll: f64 = data.iter().map(|d| model.nll(&d.as_example(), LossMode::Masked).unwrap()).sum();
            Ok(Some(EvalMetrics {
                score: nll,
                dev_nll_coarse: Some(nll),
                dev_fad_i: None,
                dev_fad_s: None,
            }))
        })
        .unwrap();
        (m, out, evals)
    };
    let (m, out, evals) = run();
    assert_eq!(evals, vec![100, 200, 300, 400]);
    assert_eq!(out.log.len(), 4);
    assert_eq!(m.step, 400);
    let first = out.losses[0];
    let last = *out.losses.last().unwrap();
    assert!(first > last);
    for d in &data {
        assert!(m.nll(&d.as_example(), LossMode::Masked).unwrap() < 0.1);
    }
    assert!(out.best_step.is_some() && out.best_params.is_some());
    let (m2, out2, _) = run();
    assert_eq!(out.losses, out2.losses);
    assert_eq!(m.params, m2.params);
}

#[test]
fn non_finite_loss_aborts_training() {
    let mut m = Model::new(tiny(ModelKind::EncoderDecoder, Positional::FixedSinusoidal), 0).unwrap();
    m.params[0..8 * V].iter_mut().for_each(|x| *x = f32::NAN);
    let data = vec![random_example(0, 4, 4, 0).train()];
    let r = train(&mut m, &data, &overfit_config(), |_, _| Ok(None));
    assert!(matches!(r, Err(Error::Training(_))));
    assert!(matches!(train(&mut m, &[], &overfit_config(), |_, _| Ok(None)), Err(Error::Precondition(_))));
}
