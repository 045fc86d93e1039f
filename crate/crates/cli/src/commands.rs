use std::fs;
use std::path::{Path, PathBuf};

use accomp_core::audio::{load_wav, mix, resample, save_wav, Waveform};
use accomp_core::codecs::{train_acoustic_codec, train_semantic};
use accomp_core::corpus::{build_corpus, CorpusManifest, VocalKind};
use accomp_core::evaluation::{coarse_nll, eval_fad, nll_examples, Embedder};
use accomp_core::experiment::{
    codec_training_audio, compare_conditions, content_hash, load_clips, load_codecs, probe_clips, read_json, run_experiment,
    tokenize_training, train_main_model, train_stage3_model, write_json, ExperimentConfig, ExperimentReport,
    MainTraining, ACOUSTIC_FILE, MODEL_FILE, SCHEMA_VERSION, SEMANTIC_FILE, VERSION,
};
use accomp_core::inference::{memorization_probe, scaled_k_grid, GenerationRequest, LongFormConfig, Pipeline};
use accomp_core::model::{Model, Positional};
use accomp_core::retrieval::{build_pool, estimate_tempo, random_baseline, retrieve, RetrievalPool};
use accomp_core::tokens::{Condition, TokenizedDataset, Variant};
use accomp_core::Error;
use anyhow::{Context, Result};
use serde_json::{json, Value};

use crate::*;

pub fn run(cli: &Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()).into());
    }
    if cli.jobs > 1 {
        log::debug!("--jobs {} accepted; stages run serially", cli.jobs);
    }
    let cfg = base_config(cli)?;
    match &cli.command {
        Command::Corpus(CorpusCommand::Build(a)) => corpus_build(cli, cfg, a),
        Command::Codec(CodecCommand::Train(a)) => codec_train(cli, cfg, a),
        Command::Codec(CodecCommand::Encode(a)) => codec_encode(cli, &cfg, a),
        Command::Tokenize(a) => tokenize(cli, cfg, a),
        Command::Train(a) => train(cli, cfg, a),
        Command::Infer(a) => infer(cli, &cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
        Command::Baseline(BaselineCommand::Pool(a)) => baseline_pool(cli, cfg, a),
        Command::Baseline(BaselineCommand::Retrieve(a)) => baseline_retrieve(a),
        Command::Baseline(BaselineCommand::Random(a)) => baseline_random(a),
        Command::ProbeMemorization(a) => probe(a),
        Command::Experiment(a) => experiment(cli, cfg, a),
        Command::Compare(a) => compare(a),
    }
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    Ok(match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::profile(&cli.profile)?,
    })
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let dir = match given {
        Some(d) => d.clone(),
        None => cfg.output_root(cli.output_root.as_deref()).join(default),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes `run.json` recording the command, its settings and their hash.
fn record_run(dir: &Path, command: &str, settings: Value) -> Result<()> {
    let hash = content_hash(&settings)?;
    write_json(
        &dir.join("run.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "version": VERSION,
            "command": command,
            "config_hash": hash,
            "settings": settings,
        }),
    )?;
    Ok(())
}

/// Wraps a report with the schema version, version string and settings
/// hash.
fn stamped(settings: &Value, report: Value) -> Result<Value> {
    let mut out = json!({
        "schema_version": SCHEMA_VERSION,
        "version": VERSION,
        "config_hash": content_hash(settings)?,
    });
    if let (Some(o), Value::Object(r)) = (out.as_object_mut(), report) {
        o.extend(r);
    }
    Ok(out)
}

fn parse_condition(s: &str) -> Result<Condition> {
    Ok(s.parse::<Condition>()?)
}

fn load_audio(path: &Path, rate: u32) -> Result<Waveform> {
    let w = load_wav(path)?;
    Ok(resample(&w, rate)?)
}

fn corpus_build(cli: &Cli, mut cfg: ExperimentConfig, a: &CorpusBuildArgs) -> Result<()> {
    let c = &mut cfg.corpus;
    c.n_train = a.n_train.unwrap_or(c.n_train);
    c.n_eval = a.n_eval.unwrap_or(c.n_eval);
    c.n_dev = a.n_dev.unwrap_or(c.n_dev);
    c.seed = a.seed.unwrap_or(c.seed);
    c.leakage_db = a.leakage_db.unwrap_or(c.leakage_db);
    c.duration_s = a.duration_s.unwrap_or(c.duration_s);
    c.quiet_instrumental_fraction = a.quiet_fraction.unwrap_or(c.quiet_instrumental_fraction);
    if a.no_filter {
        c.apply_filter = false;
    }
    let dir = out_dir(cli, &cfg, &a.out_dir, "corpus")?;
    let manifest = build_corpus(&cfg.corpus, &dir)?;
    let filtered = manifest.entries.iter().filter(|e| e.filtered).count();
    record_run(&dir, "corpus build", json!({ "corpus": cfg.corpus }))?;
    println!(
        "corpus: {} entries ({} kept training, {} filtered, {} eval, {} dev) in {}",
        manifest.entries.len(),
        manifest.training().count(),
        filtered,
        manifest.eval().count(),
        manifest.dev().count(),
        dir.display()
    );
    Ok(())
}

fn codec_train(cli: &Cli, mut cfg: ExperimentConfig, a: &CodecTrainArgs) -> Result<()> {
    cfg.codec.semantic.k = a.semantic_k.unwrap_or(cfg.codec.semantic.k);
    cfg.codec.acoustic.codebook_size = a.codebook_size.unwrap_or(cfg.codec.acoustic.codebook_size);
    let manifest = CorpusManifest::load(&a.corpus_dir)?;
    let dir = out_dir(cli, &cfg, &a.out_dir, "codec")?;
    let audio = codec_training_audio(&manifest, &a.corpus_dir)?;
    log::info!("training codecs on {} waveforms", audio.len());
    train_semantic(&audio, &cfg.codec.semantic)?.save(dir.join(SEMANTIC_FILE))?;
    train_acoustic_codec(&audio, &cfg.codec.acoustic)?.save(dir.join(ACOUSTIC_FILE))?;
    record_run(
        &dir,
        "codec train",
        json!({ "codec": cfg.codec, "corpus": a.corpus_dir }),
    )?;
    println!("codecs written to {}", dir.display());
    Ok(())
}

fn codec_encode(cli: &Cli, cfg: &ExperimentConfig, a: &CodecEncodeArgs) -> Result<()> {
    let (semantic, codec) = load_codecs(&a.codec_dir)?;
    let w = load_audio(&a.wav, codec.sample_rate)?;
    let dir = out_dir(cli, cfg, &a.out_dir, "codes")?;
    let sem = semantic.encode(&w)?;
    let (coarse, fine) = codec.encode(&w)?;
    sem.save(dir.join("semantic.u16"))?;
    coarse.save(dir.join("coarse.u16"))?;
    fine.save(dir.join("fine.u16"))?;
    println!(
        "{} semantic, {} coarse, {} fine codes written to {}",
        sem.len(),
        coarse.len(),
        fine.len(),
        dir.display()
    );
    Ok(())
}

fn tokenize(cli: &Cli, mut cfg: ExperimentConfig, a: &TokenizeArgs) -> Result<()> {
    if let Some(c) = &a.condition {
        cfg.condition = c.clone();
    }
    let condition = parse_condition(&cfg.condition)?;
    let spec = condition.spec();
    let manifest = CorpusManifest::load(&a.corpus_dir)?;
    let (semantic, codec) = load_codecs(&a.codec_dir)?;
    let dir = out_dir(cli, &cfg, &a.out_dir, "tokens")?;
    let ds = tokenize_training(&manifest, &a.corpus_dir, &condition.to_string(), &spec, &semantic, &codec)?;
    ds.save(&dir)?;
    record_run(
        &dir,
        "tokenize",
        json!({ "condition": condition.to_string(), "corpus": a.corpus_dir, "codec": a.codec_dir }),
    )?;
    println!("{} examples ({condition}) written to {}", ds.len(), dir.display());
    Ok(())
}

fn train(cli: &Cli, mut cfg: ExperimentConfig, a: &TrainArgs) -> Result<()> {
    if let Some(c) = &a.condition {
        cfg.condition = c.clone();
    }
    cfg.relative_positions |= a.relative_positions;
    let training = if a.stage3 { &mut cfg.stage3_training } else { &mut cfg.training };
    training.steps = a.steps.unwrap_or(training.steps);
    training.seed = a.seed.unwrap_or(training.seed);
    cfg.validate()?;
    let cfg = cfg.effective();
    let manifest = CorpusManifest::load(&a.corpus_dir)?;
    let (semantic, codec) = load_codecs(&a.codec_dir)?;
    if a.stage3 {
        let dir = out_dir(cli, &cfg, &a.out_dir, "stage3")?;
        train_stage3_model(&manifest, &a.corpus_dir, &codec, &cfg.stage3_model, &cfg.stage3_training, &dir)?;
        record_run(
            &dir,
            "train --stage3",
            json!({ "model": cfg.stage3_model, "training": cfg.stage3_training, "codec": a.codec_dir }),
        )?;
        println!("fine-stage model written to {}", dir.join(MODEL_FILE).display());
        return Ok(());
    }
    let (Some(tokens_dir), Some(stage3_ckpt)) = (&a.tokens_dir, &a.stage3_ckpt) else {
        return Err(Error::Config("--tokens-dir and --stage3-ckpt are required".into()).into());
    };
    let spec = cfg.condition()?.spec();
    let data = TokenizedDataset::load(tokens_dir)?;
    let stage3 = Model::load(stage3_ckpt)?;
    let dir = out_dir(cli, &cfg, &a.out_dir, "model")?;
    train_main_model(
        &MainTraining {
            manifest: &manifest,
            corpus_dir: &a.corpus_dir,
            data: &data,
            spec,
            semantic: &semantic,
            codec: &codec,
            stage3: &stage3,
            model: &cfg.model,
            training: &cfg.training,
            selection: &cfg.selection,
        },
        &dir,
    )?;
    record_run(
        &dir,
        "train",
        json!({
            "condition": cfg.condition,
            "model": cfg.model,
            "training": cfg.training,
            "selection": cfg.selection,
            "tokens": tokens_dir,
            "stage3": stage3_ckpt,
        }),
    )?;
    let positional = if cfg.model.positional == Positional::Relative { "relative" } else { "absolute" };
    println!("model ({positional} positions) written to {}", dir.join(MODEL_FILE).display());
    Ok(())
}

fn infer(cli: &Cli, cfg: &ExperimentConfig, a: &InferArgs) -> Result<()> {
    let variant: Variant = a.featurization.parse()?;
    let condition = Condition { noisy: a.noisy, variant };
    let (semantic, codec) = load_codecs(&a.codec_dir)?;
    let model = Model::load(&a.ckpt)?;
    let stage3 = Model::load(&a.stage3_ckpt)?;
    let vocal = load_audio(&a.vocal, codec.sample_rate)?;
    let pipeline = Pipeline {
        semantic: &semantic,
        codec: &codec,
        model: &model,
        stage3: &stage3,
        long_form: LongFormConfig {
            window_s: a.window_s,
            hop_s: a.hop_s,
        },
    };
    let g = pipeline.generate(&GenerationRequest {
        vocal,
        featurization: condition.spec(),
        temperature: a.temperature,
        seed: a.seed,
        long_form: a.long,
    })?;
    let dir = out_dir(cli, cfg, &a.out_dir, "infer")?;
    save_wav(&g.instrumental, dir.join("instrumental.wav"))?;
    save_wav(&g.mixture, dir.join("mix.wav"))?;
    if !g.semantic.is_empty() {
        g.semantic.save(dir.join("semantic.u16"))?;
    }
    g.coarse.save(dir.join("coarse.u16"))?;
    g.fine.save(dir.join("fine.u16"))?;
    record_run(
        &dir,
        "infer",
        json!({
            "vocal": a.vocal,
            "ckpt": a.ckpt,
            "stage3": a.stage3_ckpt,
            "codec": a.codec_dir,
            "condition": condition.to_string(),
            "temperature": a.temperature,
            "seed": a.seed,
            "long_form": a.long,
            "window_s": a.window_s,
            "hop_s": a.hop_s,
            "windows": g.windows.len(),
        }),
    )?;
    println!(
        "{:.2} s of accompaniment from {} window(s) written to {}",
        g.instrumental.duration_s(),
        g.windows.len(),
        dir.display()
    );
    Ok(())
}

fn evaluate(mut cfg: ExperimentConfig, a: &EvaluateArgs) -> Result<()> {
    if let Some(c) = &a.condition {
        cfg.condition = c.clone();
    }
    let condition = parse_condition(&cfg.condition)?;
    let spec = condition.spec();
    let temperature = a.temperature.unwrap_or(cfg.eval.temperature);
    let seed = a.seed.unwrap_or(cfg.eval.seed);
    let max_clips = a.max_clips.or(cfg.eval.max_clips);
    let (semantic, codec) = load_codecs(&a.codec_dir)?;
    let model = Model::load(&a.ckpt)?;
    let stage3 = Model::load(&a.stage3_ckpt)?;
    let manifest = CorpusManifest::load(&a.eval_dir)?;
    let clips = load_clips(manifest.eval(), &a.eval_dir, max_clips)?;
    let pipeline = Pipeline {
        semantic: &semantic,
        codec: &codec,
        model: &model,
        stage3: &stage3,
        long_form: LongFormConfig::default(),
    };
    let embedder = Embedder::default();
    let kinds: &[VocalKind] = match a.vocal_kind {
        VocalKindArg::Both => &[VocalKind::Isolated, VocalKind::Separated],
        VocalKindArg::Isolated => &[VocalKind::Isolated],
        VocalKindArg::Separated => &[VocalKind::Separated],
    };
    let (mut fad, mut nll) = ([None, None], [None, None]);
    let mut regularized = false;
    for (i, kind) in [VocalKind::Isolated, VocalKind::Separated].into_iter().enumerate() {
        if !kinds.contains(&kind) {
            continue;
        }
        let f = eval_fad(&pipeline, &embedder, &clips, kind, spec, temperature, seed)?;
        regularized |= f.regularized;
        fad[i] = Some(f.fad);
        let ex = nll_examples(&clips, kind, &spec, &semantic, &codec, seed)?;
        nll[i] = Some(coarse_nll(&model, &ex)?);
    }
    let gap = fad[0].zip(fad[1]).map(|(i, s)| i - s);
    let settings = json!({
        "ckpt": a.ckpt,
        "stage3": a.stage3_ckpt,
        "codec": a.codec_dir,
        "eval_dir": a.eval_dir,
        "condition": condition.to_string(),
        "temperature": temperature,
        "seed": seed,
        "max_clips": max_clips,
    });
    let report = stamped(
        &settings,
        json!({
            "condition": condition.to_string(),
            "fad_i": fad[0],
            "fad_s": fad[1],
            "gap": gap,
            "nll_i": nll[0],
            "nll_s": nll[1],
            "n_clips": clips.len(),
            "embedder_seed": embedder.seed,
            "regularized": regularized,
        }),
    )?;
    write_json(&a.out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn baseline_pool(cli: &Cli, mut cfg: ExperimentConfig, a: &PoolArgs) -> Result<()> {
    let p = &mut cfg.eval.pool;
    p.n_tracks = a.n_tracks.unwrap_or(p.n_tracks);
    p.duration_s = a.duration_s.unwrap_or(p.duration_s);
    p.seed = a.seed.unwrap_or(p.seed);
    let dir = out_dir(cli, &cfg, &a.out_dir, "pool")?;
    let pool = build_pool(&cfg.eval.pool, &dir)?;
    record_run(&dir, "baseline pool", json!({ "pool": cfg.eval.pool }))?;
    println!(
        "pool: {} tracks indexed, {} excluded, in {}",
        pool.len(),
        pool.excluded().len(),
        dir.display()
    );
    Ok(())
}

fn pool_rate(pool: &RetrievalPool) -> Result<u32> {
    pool.entries()
        .first()
        .map(|e| e.instrumental.sample_rate())
        .ok_or_else(|| Error::Precondition("empty retrieval pool".into()).into())
}

fn baseline_retrieve(a: &RetrieveArgs) -> Result<()> {
    let pool = RetrievalPool::open(&a.pool_dir)?;
    let rate = pool_rate(&pool)?;
    let vocal = load_audio(&a.vocal, rate)?;
    let tempo = match (a.tempo, &a.instrumental) {
        (Some(t), _) => t,
        (None, Some(path)) => estimate_tempo(&load_audio(path, rate)?)?,
        (None, None) => return Err(Error::Config("either --tempo or --instrumental is required".into()).into()),
    };
    let r = retrieve(&vocal, tempo, &pool)?;
    save_wav(&mix(&vocal, &r.instrumental)?, &a.out)?;
    let info = json!({
        "clip_id": r.clip_id,
        "query_tempo_bpm": tempo,
        "key_distance": r.key_distance,
        "raw_ratio": r.raw_ratio,
        "ratio": r.ratio,
    });
    write_json(&a.out.with_extension("json"), &stamped(&info, info.clone())?)?;
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(())
}

fn baseline_random(a: &RandomArgs) -> Result<()> {
    let pool = RetrievalPool::open(&a.pool_dir)?;
    let rate = pool_rate(&pool)?;
    let vocal = a.vocal.as_deref().map(|p| load_audio(p, rate)).transpose()?;
    let duration = vocal.as_ref().map_or(a.duration_s, |v| v.duration_s());
    let pick = random_baseline(&pool, a.seed, duration)?;
    let out = match &vocal {
        Some(v) => mix(v, &pick.instrumental)?,
        None => pick.instrumental.clone(),
    };
    save_wav(&out, &a.out)?;
    let info = json!({ "clip_id": pick.clip_id, "offset": pick.offset, "seed": a.seed, "duration_s": duration });
    write_json(&a.out.with_extension("json"), &stamped(&info, info.clone())?)?;
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(())
}

fn probe(a: &ProbeArgs) -> Result<()> {
    let model = Model::load(&a.ckpt)?;
    let ds = TokenizedDataset::load(&a.tokens_dir)?;
    let semantic_k = load_codecs(&a.codec_dir)?.0.k;
    let clips = probe_clips(&ds, a.trials);
    let n_semantic = clips.first().map_or(0, |c| c.semantic.len());
    if n_semantic == 0 {
        return Err(Error::Config("the tokenized data has no semantic targets".into()).into());
    }
    let grid = a.k_grid.clone().unwrap_or_else(|| scaled_k_grid(n_semantic));
    let report = memorization_probe(&model, &clips, &grid, semantic_k)?;
    let settings = json!({ "ckpt": a.ckpt, "tokens": a.tokens_dir, "k_grid": grid, "trials": clips.len() });
    let out = stamped(&settings, serde_json::to_value(&report)?)?;
    write_json(&a.out, &out)?;
    for r in &report.results {
        println!("k = {:4}: {}/{} exact ({:.3})", r.k, r.exact_matches, r.trials, r.match_rate);
    }
    Ok(())
}

fn experiment(cli: &Cli, mut cfg: ExperimentConfig, a: &ExperimentArgs) -> Result<()> {
    if let Some(n) = &a.name {
        cfg.name = n.clone();
    }
    if let Some(c) = &a.condition {
        cfg.condition = c.clone();
    }
    cfg.training.seed = a.seed.unwrap_or(cfg.training.seed);
    cfg.training.steps = a.steps.unwrap_or(cfg.training.steps);
    cfg.no_filter |= a.no_filter;
    cfg.relative_positions |= a.relative_positions;
    let root = cfg.output_root(cli.output_root.as_deref());
    let outcome = run_experiment(&cfg, &root)?;
    for s in &outcome.stages {
        let state = if s.cache_hit { "cached" } else { "built" };
        println!("{:<8} {:<6} {}", s.stage, state, s.dir.display());
    }
    let r = &outcome.report;
    println!(
        "{} {}: FAD_i {:.4}  FAD_s {:.4}  gap {:.4}  NLL_i {:.4}  NLL_s {:.4}  best step {}",
        r.name,
        r.condition,
        r.fad_i,
        r.fad_s,
        r.gap,
        r.nll_i,
        r.nll_s,
        r.best_step.map_or("-".into(), |s| s.to_string())
    );
    println!("report: {}", outcome.dir.join("report.json").display());
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| read_json::<ExperimentReport>(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let c = compare_conditions(&reports)?;
    print!("{}", c.to_table());
    if let Some(path) = &a.json {
        write_json(path, &c)?;
    }
    Ok(())
}
