use std::path::{Path, PathBuf};

use qlfr_core::backend::{Cache, CachedBackend, CountingBackend, Decoding, MockBackend, MockRule};
use qlfr_core::chains::{ChainRunner, ChainVariant, CueProfile, InContextMode};
use qlfr_core::classify::{Method, PredictionFlag, PromptStyle, Strategy};
use qlfr_core::corpus::{sample_splits, DatasetManifest};
use qlfr_core::evaluate::{run_experiment, ExperimentConfig, ExperimentContext, ExperimentMethod};
use qlfr_core::rationales::{
    export_multitask, generate_rationales, read_export, read_rationales, write_export, ExportFlags,
    RationaleFlags,
};
use qlfr_core::templates::TemplateRegistry;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn config(method: ExperimentMethod, per_class: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: "fixture".into(),
        seed,
        per_class,
        method,
        backend: "mock".into(),
        decoding: Decoding::for_model("mock"),
        in_context: InContextMode::ZeroShot,
        strategy: Strategy::ParseText,
        train_ratio: 1.0,
        limit: None,
    }
}

#[test]
fn committed_toy_export_regenerates_byte_for_byte() {
    let dir = fixtures().join("toy50");
    let corpus = DatasetManifest::load(&dir.join("dataset.toml"))
        .unwrap()
        .load_corpus()
        .unwrap();
    let splits = sample_splits(&corpus, 20, 7).unwrap();
    assert_eq!(splits.train.len(), 50);

    let mock = MockBackend::from_file(&dir.join("rules.jsonl"))
        .unwrap()
        .with_id("mock");
    let registry = TemplateRegistry::builtin();
    let runner = ChainRunner::new(&mock, &registry, Decoding::for_model("mock"));
    let run = generate_rationales(
        &splits.train,
        &CueProfile::news(),
        &runner,
        RationaleFlags {
            sse: true,
            da: true,
        },
        4,
    )
    .unwrap();
    assert_eq!(
        run.records,
        read_rationales(&dir.join("rationales.jsonl")).unwrap()
    );

    let (records, manifest) = export_multitask(
        "toy50",
        &splits.digest(),
        &run.records,
        corpus.label_set(),
        ExportFlags::default(),
        1.0,
        1.0,
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_export(tmp.path(), &records, &manifest).unwrap();
    for file in ["multitask.jsonl", "manifest.json"] {
        assert_eq!(
            std::fs::read(tmp.path().join(file)).unwrap(),
            std::fs::read(dir.join("export").join(file)).unwrap(),
            "{file}"
        );
    }
    let (committed, committed_manifest) = read_export(&dir.join("export")).unwrap();
    assert_eq!(committed.len(), 150);
    assert_eq!(committed_manifest.counts.label, 50);
}

#[test]
fn direct_method_makes_one_call_per_test_item() {
    let corpus = DatasetManifest::load(&fixtures().join("news7/dataset.toml"))
        .unwrap()
        .load_corpus()
        .unwrap();
    let mock = CountingBackend::new(MockBackend::new(vec![MockRule::text(
        "Categorize this text",
        "world",
    )]));
    let registry = TemplateRegistry::builtin();
    let ctx = ExperimentContext {
        corpus: &corpus,
        backend: &mock,
        registry: &registry,
        exemplars: &[],
        workers: 3,
    };
    let exp = config(
        ExperimentMethod::Direct {
            style: PromptStyle::Bare,
        },
        2,
        1,
    );
    let output = run_experiment(&exp, &ctx, None).unwrap();
    assert_eq!(output.predictions.len(), 14);
    assert_eq!(mock.calls(), 14);
    assert!(mock
        .prompts()
        .iter()
        .all(|p| p.starts_with("Categorize this text: '")));
    // only the world items are right
    assert!((output.report.metrics.accuracy - 2.0 / 14.0).abs() < 1e-12);
}

#[test]
fn rationale_rerun_on_warm_cache_makes_no_calls() {
    let corpus = DatasetManifest::load(&fixtures().join("news7/dataset.toml"))
        .unwrap()
        .load_corpus()
        .unwrap();
    let train: Vec<_> = corpus.examples()[..20].to_vec();
    let dir = tempfile::tempdir().unwrap();
    let registry = TemplateRegistry::builtin();
    let flags = RationaleFlags {
        sse: true,
        da: true,
    };
    let mut results = Vec::new();
    for _ in 0..2 {
        let counting = CountingBackend::new(
            MockBackend::from_file(&fixtures().join("news7/rules.jsonl")).unwrap(),
        );
        let cached = CachedBackend::new(&counting, Cache::open(dir.path()).unwrap());
        let runner = ChainRunner::new(&cached, &registry, Decoding::for_model("mock"));
        let run = generate_rationales(&train, &CueProfile::news(), &runner, flags, 4).unwrap();
        results.push((run.records, counting.calls()));
    }
    assert_eq!(results[0].1, 20 * 5);
    assert_eq!(results[1].1, 0);
    assert_eq!(results[0].0, results[1].0);
}

#[test]
fn scored_strategy_uses_candidate_scores_and_falls_back() {
    let corpus = DatasetManifest::load(&fixtures().join("news7/dataset.toml"))
        .unwrap()
        .load_corpus()
        .unwrap();
    let registry = TemplateRegistry::builtin();
    let scoring = MockBackend::new(vec![MockRule::scores(
        "classify it into",
        [
            ("health", -3.0),
            ("sport", -0.5),
            ("entertainment", -2.0),
            ("business", -2.0),
            ("sci_tech", -2.0),
            ("U.S.", -2.0),
            ("world", -1.0),
        ],
    )]);
    let ctx = ExperimentContext {
        corpus: &corpus,
        backend: &scoring,
        registry: &registry,
        exemplars: &[],
        workers: 2,
    };
    let mut exp = config(
        ExperimentMethod::Qlfr {
            variant: ChainVariant::NoBoth,
        },
        2,
        1,
    );
    exp.strategy = Strategy::ScoredArgmax;
    let output = run_experiment(&exp, &ctx, None).unwrap();
    assert!(output
        .predictions
        .iter()
        .all(|p| p.method == Method::Scored && p.label.as_ref().unwrap().as_str() == "sport"));

    let text_only = MockBackend::from_file(&fixtures().join("news7/rules.jsonl")).unwrap();
    let ctx = ExperimentContext {
        backend: &text_only,
        ..ctx
    };
    let output = run_experiment(&exp, &ctx, None).unwrap();
    assert_eq!(output.report.metrics.accuracy, 1.0);
    assert!(output
        .predictions
        .iter()
        .all(|p| p.is_flagged(PredictionFlag::ScoringFallback)));
}

#[test]
fn limit_truncates_the_test_split() {
    let corpus = DatasetManifest::load(&fixtures().join("news7/dataset.toml"))
        .unwrap()
        .load_corpus()
        .unwrap();
    let mock = CountingBackend::new(
        MockBackend::from_file(&fixtures().join("news7/rules.jsonl")).unwrap(),
    );
    let registry = TemplateRegistry::builtin();
    let ctx = ExperimentContext {
        corpus: &corpus,
        backend: &mock,
        registry: &registry,
        exemplars: &[],
        workers: 1,
    };
    let mut exp = config(
        ExperimentMethod::Qlfr {
            variant: ChainVariant::Full,
        },
        2,
        1,
    );
    exp.limit = Some(5);
    let output = run_experiment(&exp, &ctx, None).unwrap();
    assert_eq!(output.report.metrics.n, 5);
    assert_eq!(mock.calls(), 20);
}
