use std::fs;

use super::*;
use crate::model::Positional;
use crate::tokens::NOISY_SIGMA;

#[test]
fn condition_strings_set_noise_and_streams() {
    let cfg = ExperimentConfig {
        condition: "noisy/s-sa".into(),
        ..ExperimentConfig::smoke()
    };
    let spec = cfg.condition().unwrap().spec();
    assert_eq!(spec.noise_sigma, NOISY_SIGMA);
    assert_eq!(spec.noise_sigma, 0.01);
    assert!(spec.input_semantic && !spec.input_acoustic && spec.target_semantic);
    let bad = ExperimentConfig {
        condition: "loud/s-sa".into(),
        ..ExperimentConfig::smoke()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn flags_fold_into_the_effective_config() {
    let base = ExperimentConfig::smoke();
    let flagged = ExperimentConfig {
        no_filter: true,
        relative_positions: true,
        ..base.clone()
    };
    let e = flagged.effective();
    assert!(!e.corpus.apply_filter);
    assert_eq!(e.model.positional, Positional::Relative);
    assert_ne!(base.config_hash().unwrap(), flagged.config_hash().unwrap());
    let renamed = ExperimentConfig {
        name: "other".into(),
        output_root: Some("/elsewhere".into()),
        ..base.clone()
    };
    assert_eq!(base.config_hash().unwrap(), renamed.config_hash().unwrap());
    assert_eq!(base.config_hash().unwrap().len(), 64);
}

#[test]
fn profiles_validate_and_bad_lengths_are_rejected() {
    for p in ["default", "desk", "smoke"] {
        ExperimentConfig::profile(p).unwrap().validate().unwrap();
    }
    assert!(ExperimentConfig::profile("huge").is_err());
    let mut c = ExperimentConfig::smoke();
    c.model.max_len = 224;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = ExperimentConfig::smoke();
    c.eval.baselines = true;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = ExperimentConfig::smoke();
    c.codec.acoustic.sample_rate = 8000;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn config_files_load_as_toml_or_json() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("exp.toml");
    fs::write(
        &toml_path,
        "name = \"t\"\ncondition = \"noisy/a-a\"\n[training]\nsteps = 7\n[corpus]\nn_train = 3\n",
    )
    .unwrap();
    let c = ExperimentConfig::load(&toml_path).unwrap();
    assert_eq!((c.name.as_str(), c.condition.as_str(), c.training.steps, c.corpus.n_train), ("t", "noisy/a-a", 7, 3));
    assert_eq!(c.training.batch_size, TrainConfigDefaults::batch());

    let json_path = dir.path().join("exp.json");
    fs::write(&json_path, serde_json::to_string(&ExperimentConfig::smoke()).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&json_path).unwrap(), ExperimentConfig::smoke());

    fs::write(&json_path, "{\"training\": {\"steps\": \"many\"}}").unwrap();
    assert!(matches!(ExperimentConfig::load(&json_path), Err(Error::Config(_))));
}

struct TrainConfigDefaults;
impl TrainConfigDefaults {
    fn batch() -> usize {
        crate::model::TrainConfig::default().batch_size
    }
}

#[test]
fn output_root_precedence() {
    let c = ExperimentConfig {
        output_root: Some("cfg-root".into()),
        ..ExperimentConfig::smoke()
    };
    assert_eq!(c.output_root(Some(Path::new("cli-root"))), PathBuf::from("cli-root"));
    std::env::set_var(OUTPUT_ROOT_ENV, "env-root");
    assert_eq!(c.output_root(None), PathBuf::from("env-root"));
    std::env::remove_var(OUTPUT_ROOT_ENV);
    assert_eq!(c.output_root(None), PathBuf::from("cfg-root"));
    let d = ExperimentConfig::smoke();
    assert_eq!(d.output_root(None), PathBuf::from(DEFAULT_OUTPUT_ROOT));
}

#[test]
fn stages_run_once_and_rebuild_when_interrupted() {
    let root = tempfile::tempdir().unwrap();
    let key = content_hash(&"k").unwrap();
    let mut runs = 0;
    for _ in 0..2 {
        let st = run_stage(root.path(), "s", &key, |dir| {
            runs += 1;
            fs::write(dir.join("x"), "1").map_err(|e| Error::io(dir, e))
        })
        .unwrap();
        assert!(st.dir.join("x").exists());
    }
    assert_eq!(runs, 1);
    fs::remove_file(stage_dir(root.path(), "s", &key).join(STAGE_MARKER)).unwrap();
    let st = run_stage(root.path(), "s", &key, |_| Ok(())).unwrap();
    assert!(!st.cache_hit);
    assert!(!st.dir.join("x").exists());
    let failed = run_stage(root.path(), "f", &key, |_| Err(Error::Training("boom".into())));
    assert!(failed.is_err());
    assert!(!stage_dir(root.path(), "f", &key).join(STAGE_MARKER).exists());
}

fn report(name: &str, condition: &str, seed: u64, fad_i: f64, fad_s: f64) -> ExperimentReport {
    ExperimentReport {
        schema_version: SCHEMA_VERSION,
        version: VERSION.into(),
        config_hash: "0".repeat(64),
        name: name.into(),
        condition: condition.into(),
        seed,
        fad_i,
        fad_s,
        gap: fad_i - fad_s,
        nll_i: 1.0,
        nll_s: 2.0,
        best_step: Some(500),
        steps: 3000,
        n_clips: 10,
        embedder_seed: 1,
        regularized: false,
        baselines: None,
        stage_keys: BTreeMap::new(),
    }
}

#[test]
fn comparison_orders_clean_first_and_computes_gaps() {
    let reports = vec![
        report("c", "noisy/s-sa", 0, 1.0, 0.75),
        report("b", "clean/a-a", 0, 2.0, 3.5),
        report("a", "clean/sa-sa", 1, 4.0, 1.0),
        report("d", "clean/sa-sa", 0, 4.0, 1.0),
    ];
    let c = compare_conditions(&reports).unwrap();
    let order: Vec<_> = c.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(order, ["d", "a", "b", "c"]);
    for r in &c.rows {
        assert_eq!(r.gap, r.fad_i - r.fad_s);
    }
    let table = c.to_table();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().nth(1).unwrap().starts_with("clean/sa-sa"));

    let same = compare_conditions(&[report("x", "clean/sa-sa", 0, 1.0, 0.5), report("x", "clean/sa-sa", 0, 1.0, 0.5)]).unwrap();
    assert_eq!(same.rows[0], same.rows[1]);
    assert!(compare_conditions(&reports[..1]).is_err());
}
