mod common;

use std::sync::Arc;

use vocabfree_core::classifier::ClassifierMode;
use vocabfree_core::providers::{MockEmbedder, VisionLanguageEmbedder};
use vocabfree_core::runner::artifacts::{
    read_json, ClassifierArtifact, MetricsArtifact, PredictionRecord, RunManifest, VocabularyArtifact,
    AGGREGATE_FILE, CLASSIFIER_FILE, METRICS_FILE, PREDICTIONS_FILE, REFINEMENT_FILE, RUN_MANIFEST_FILE,
    VOCABULARY_FILE,
};
use vocabfree_core::runner::{
    cli_build, cli_classify, cli_discover, cli_evaluate, cli_run_all, DatasetManifest, ManifestEntry, Providers,
    RunConfig, Split,
};
use vocabfree_core::{Error, Stage};

#[test]
fn discover_is_byte_identical_across_invocations() {
    let cfg = common::config();
    let m = common::manifest();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cli_discover(&cfg, &m, &Providers::mock(cfg.seed), &common::options(a.path())).unwrap();
    cli_discover(&cfg, &m, &Providers::mock(cfg.seed), &common::options(b.path())).unwrap();
    assert_eq!(common::files(a.path()), common::files(b.path()));
    assert_eq!(common::files(a.path()).len(), 3);
}

#[test]
fn cnr_off_retains_every_candidate() {
    let cfg = RunConfig {
        cnr_enabled: false,
        ..common::config()
    };
    let dir = tempfile::tempdir().unwrap();
    let v = cli_discover(&cfg, &common::manifest(), &Providers::mock(cfg.seed), &common::options(dir.path())).unwrap();
    assert!(v.scored.iter().all(|c| c.retained));
    let report: Vec<serde_json::Value> = read_json(&dir.path().join(REFINEMENT_FILE)).unwrap();
    assert!(report.iter().all(|r| r["retained"] == true));
}

#[test]
fn empty_train_split_is_stage_tagged() {
    let only_test: Vec<ManifestEntry> = common::manifest()
        .entries()
        .iter()
        .filter(|e| e.split == Split::Test)
        .cloned()
        .collect();
    let m = DatasetManifest::new(only_test, common::fixture_dir()).unwrap();
    let cfg = common::config();
    let dir = tempfile::tempdir().unwrap();
    let err = cli_discover(&cfg, &m, &Providers::mock(0), &common::options(dir.path())).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Discovery));
    assert!(matches!(err.root(), Error::EmptyTrainSet));
    assert!(err.to_string().starts_with("[discovery]"));
}

#[test]
fn split_commands_reproduce_run_all() {
    let cfg = common::config();
    let m = common::manifest();
    let p = Providers::mock(cfg.seed);
    let all = tempfile::tempdir().unwrap();
    cli_run_all(&cfg, &m, &|s| Ok(Providers::mock(s)), &common::options(all.path())).unwrap();

    let step = tempfile::tempdir().unwrap();
    let o = common::options(step.path());
    cli_discover(&cfg, &m, &p, &o).unwrap();
    cli_build(&cfg, &m, &p, step.path(), &o).unwrap();
    cli_classify(&cfg, &m, &step.path().join(CLASSIFIER_FILE), &p, &o).unwrap();
    cli_evaluate(
        &cfg,
        &m,
        &step.path().join(PREDICTIONS_FILE),
        Some(&step.path().join(VOCABULARY_FILE)),
        &p,
        &o,
    )
    .unwrap();

    for name in [VOCABULARY_FILE, REFINEMENT_FILE, CLASSIFIER_FILE, PREDICTIONS_FILE, METRICS_FILE] {
        assert_eq!(
            std::fs::read(all.path().join(name)).unwrap(),
            std::fs::read(step.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn evaluation_needs_only_persisted_predictions() {
    let cfg = common::config();
    let m = common::manifest();
    let run = tempfile::tempdir().unwrap();
    cli_run_all(&cfg, &m, &|s| Ok(Providers::mock(s)), &common::options(run.path())).unwrap();
    let original: MetricsArtifact = read_json(&run.path().join(METRICS_FILE)).unwrap();

    // a semantic embedder alone is enough; the other providers would fail if touched
    let dead = tempfile::tempdir().unwrap();
    let mut p = Providers::mock(cfg.seed);
    let counted = Arc::new(vocabfree_core::providers::Counting::new(MockEmbedder::new(0, "mock-vl", 64).unwrap()));
    p.embedder = counted.clone();
    let again = cli_evaluate(
        &cfg,
        &m,
        &run.path().join(PREDICTIONS_FILE),
        Some(&run.path().join(VOCABULARY_FILE)),
        &p,
        &common::options(dead.path()),
    )
    .unwrap();
    assert_eq!(again, original);
    assert_eq!(counted.calls(), 0);
}

fn single_class_artifact(dir: &std::path::Path, embedder: &MockEmbedder) -> std::path::PathBuf {
    use vocabfree_core::classifier::{ClassPrototype, CoupledClassifier};
    use vocabfree_core::providers::{ImageEmbedder, TextEmbedder};
    let t = embedder.embed_str("a photo of a gull").unwrap();
    let a = ClassifierArtifact {
        schema_version: 1,
        seed: 0,
        config_hash: "x".into(),
        classifier: CoupledClassifier {
            mode: ClassifierMode::ZeroShot,
            alpha: 1.0,
            k_aug: 10,
            embedder: embedder.image_fingerprint().clone(),
            text_embedder: embedder.text_fingerprint().clone(),
            classes: vec![ClassPrototype {
                name: "Gull".into(),
                t_c: t.clone(),
                v_c: None,
                w: t,
            }],
        },
    };
    let p = dir.join("one.json");
    std::fs::write(&p, serde_json::to_vec(&a).unwrap()).unwrap();
    p
}

#[test]
fn classify_records_partial_failures_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for i in 0..10 {
        let name = format!("img{i}.bin");
        if i != 6 {
            std::fs::write(dir.path().join(&name), format!("bytes {i}")).unwrap();
        }
        entries.push(ManifestEntry {
            image_path: name,
            gt_label: None,
            split: Split::Test,
        });
    }
    let m = DatasetManifest::new(entries, dir.path()).unwrap();
    let e = MockEmbedder::new(0, "mock-vl", 64).unwrap();
    let clf = single_class_artifact(dir.path(), &e);
    let cfg = RunConfig::default();
    let out = tempfile::tempdir().unwrap();
    let recs = cli_classify(&cfg, &m, &clf, &Providers::mock(0), &common::options(out.path())).unwrap();
    assert_eq!(recs.len(), 10);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r.image(), format!("img{i}.bin"));
        match r {
            PredictionRecord::Ok(p) => {
                assert_eq!(p.predicted_name, "Gull");
                assert_eq!(p.runner_up_margin, 0.0);
            }
            PredictionRecord::Failed { error, .. } => {
                assert_eq!(i, 6);
                assert!(error.contains("img6.bin"));
            }
        }
    }
    let first = std::fs::read(out.path().join(PREDICTIONS_FILE)).unwrap();
    cli_classify(&cfg, &m, &clf, &Providers::mock(0), &common::options(out.path())).unwrap();
    assert_eq!(first, std::fs::read(out.path().join(PREDICTIONS_FILE)).unwrap());
}

#[test]
fn classify_rejects_foreign_or_corrupt_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let other = MockEmbedder::new(0, "some-other-model", 64).unwrap();
    let clf = single_class_artifact(dir.path(), &other);
    let m = common::manifest();
    let cfg = RunConfig::default();
    let err = cli_classify(&cfg, &m, &clf, &Providers::mock(0), &common::options(dir.path())).unwrap_err();
    assert!(matches!(err.root(), Error::FingerprintMismatch { .. }), "{err}");

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, br#"{"schema_version":1,"mode":"zero_shot"}"#).unwrap();
    let err = cli_classify(&cfg, &m, &broken, &Providers::mock(0), &common::options(dir.path())).unwrap_err();
    assert!(matches!(err.root(), Error::ClassifierArtifactCorrupt(_)), "{err}");
}

#[test]
fn evaluate_flags_unlabelled_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.jsonl");
    std::fs::write(
        &preds,
        "{\"image\":\"images/blue_jay_3.txt\",\"predicted\":\"Blue Jay\",\"similarity\":0.9,\"runner_up_margin\":0.1}\n\
         {\"image\":\"nowhere.png\",\"predicted\":\"Blue Jay\",\"similarity\":0.9,\"runner_up_margin\":0.1}\n",
    )
    .unwrap();
    let err = cli_evaluate(
        &RunConfig::default(),
        &common::manifest(),
        &preds,
        None,
        &Providers::mock(0),
        &common::options(dir.path()),
    )
    .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Evaluate));
    assert!(matches!(err.root(), Error::MissingGroundTruth(v) if v == &vec!["nowhere.png".to_string()]));
}

#[test]
fn perfect_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::manifest();
    let lines: String = m
        .split(Split::Test)
        .iter()
        .map(|e| {
            format!(
                "{{\"image\":\"{}\",\"predicted\":\"{}\",\"similarity\":1.0,\"runner_up_margin\":0.0}}\n",
                e.image_path,
                e.gt_label.as_deref().unwrap()
            )
        })
        .collect();
    let preds = dir.path().join("p.jsonl");
    std::fs::write(&preds, lines).unwrap();
    let m = cli_evaluate(&RunConfig::default(), &m, &preds, None, &Providers::mock(0), &common::options(dir.path()))
        .unwrap();
    assert_eq!((m.report.cacc, m.report.sacc), (1.0, 1.0));
    assert!(m.report.filtration.is_none());
}

#[test]
fn repeat_runs_write_per_run_and_aggregate() {
    let cfg = RunConfig {
        repeat_runs: 3,
        ..common::config()
    };
    let dir = tempfile::tempdir().unwrap();
    let outs = cli_run_all(&cfg, &common::manifest(), &|s| Ok(Providers::mock(s)), &common::options(dir.path())).unwrap();
    assert_eq!(outs.iter().map(|o| o.seed).collect::<Vec<_>>(), vec![42, 43, 44]);
    for i in 0..3 {
        let rm: RunManifest = read_json(&dir.path().join(format!("run_{i:03}")).join(RUN_MANIFEST_FILE)).unwrap();
        assert_eq!(rm.seed, 42 + i as u64);
        assert_eq!(rm.config_hash, cfg.config_hash());
    }
    let agg: serde_json::Value = read_json(&dir.path().join(AGGREGATE_FILE)).unwrap();
    assert_eq!(agg["runs"].as_array().unwrap().len(), 3);
    assert_eq!(agg["seeds"], serde_json::json!([42, 43, 44]));
    let caccs: Vec<f64> = outs.iter().map(|o| o.metrics.as_ref().unwrap().cacc).collect();
    let mean = caccs.iter().sum::<f64>() / 3.0;
    assert!((agg["cacc"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn zero_shot_skips_discovery() {
    let counted = common::Counted::new(42);
    let cfg = RunConfig {
        mode: ClassifierMode::ZeroShot,
        meta_category: Some("bird".into()),
        class_names: Some(vec!["Pine Warbler".into(), "Black Tern".into(), "Blue Jay".into()]),
        ..common::config()
    };
    let dir = tempfile::tempdir().unwrap();
    let p = counted.providers();
    let outs = cli_run_all(&cfg, &common::manifest(), &|_| Ok(p.clone()), &common::options(dir.path())).unwrap();
    assert_eq!(counted.vqa.calls(), 0);
    assert_eq!(counted.embedder.augmented_calls(), 0);
    assert!(!dir.path().join(VOCABULARY_FILE).exists());
    let clf = &outs[0].classifier;
    assert_eq!(clf.mode, ClassifierMode::ZeroShot);
    assert!(clf.classes.iter().all(|c| c.v_c.is_none() && c.w == c.t_c));
    assert!(outs[0].metrics.is_some());
}

#[test]
fn zero_shot_without_meta_category_is_config_error() {
    let cfg = RunConfig {
        mode: ClassifierMode::ZeroShot,
        class_names: Some(vec!["a".into()]),
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let err = cli_run_all(&cfg, &common::manifest(), &|s| Ok(Providers::mock(s)), &common::options(dir.path()))
        .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Config));
}

#[test]
fn few_shot_needs_train_labels() {
    let unlabeled: Vec<ManifestEntry> = common::manifest()
        .entries()
        .iter()
        .cloned()
        .map(|mut e| {
            if e.split == Split::Train {
                e.gt_label = None;
            }
            e
        })
        .collect();
    let m = DatasetManifest::new(unlabeled, common::fixture_dir()).unwrap();
    let cfg = RunConfig {
        mode: ClassifierMode::FewShot,
        ..common::config()
    };
    let dir = tempfile::tempdir().unwrap();
    let err = cli_run_all(&cfg, &m, &|s| Ok(Providers::mock(s)), &common::options(dir.path())).unwrap_err();
    assert!(matches!(err.root(), Error::Precondition(msg) if msg.contains("few_shot")), "{err}");
}

#[test]
fn few_shot_run_uses_labels_as_vocabulary() {
    let cfg = RunConfig {
        mode: ClassifierMode::FewShot,
        ..common::config()
    };
    let dir = tempfile::tempdir().unwrap();
    let outs = cli_run_all(&cfg, &common::manifest(), &|s| Ok(Providers::mock(s)), &common::options(dir.path())).unwrap();
    let names: Vec<&str> = outs[0].classifier.class_names();
    assert_eq!(names, vec!["Black Tern", "Blue Jay", "Pine Warbler"]);
    assert!(outs[0].classifier.classes.iter().all(|c| c.v_c.is_some()));
}

#[test]
fn separate_filtration_embedder_is_used_for_scoring() {
    let cfg = common::config();
    let counted = common::Counted::new(cfg.seed);
    let mut p = counted.providers();
    let filtration = Arc::new(vocabfree_core::providers::Counting::new(MockEmbedder::new(0, "mock-vl-large", 64).unwrap()));
    p.filtration = filtration.clone() as Arc<dyn VisionLanguageEmbedder>;
    let dir = tempfile::tempdir().unwrap();
    let outs = cli_run_all(&cfg, &common::manifest(), &|_| Ok(p.clone()), &common::options(dir.path())).unwrap();
    let v = outs[0].vocabulary.as_ref().unwrap();
    assert!(filtration.text_items() >= v.scored.len());
    // inference prototypes are re-embedded with the inference model
    assert!(counted.embedder.text_items() > 0);
    let vocab: VocabularyArtifact = read_json(&dir.path().join(VOCABULARY_FILE)).unwrap();
    assert_eq!(outs[0].classifier.class_names().len(), vocab.retained.len());
}
