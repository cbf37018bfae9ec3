use std::path::{Path, PathBuf};

use qlfr_core::backend::{Backend, Cache, CachedBackend, Decoding};
use qlfr_core::chains::{load_exemplars, ChainRunner, CueProfile, FewShotExemplar, InContextMode};
use qlfr_core::corpus::{Corpus, DatasetManifest, Splits};
use qlfr_core::evaluate::{
    experiment_splits, render_table, run_experiment, EvalReport, ExperimentConfig,
    ExperimentContext, ExperimentMethod, REPORT_FILE,
};
use qlfr_core::rationales::{
    export_multitask, generate_rationales, read_rationales, write_export, write_rationales,
    ExportFlags, RationaleFlags,
};
use qlfr_core::{jsonl, Error};
use serde_json::json;

use crate::config::{ResolvedBackend, RunConfigFile};
use crate::{CacheAction, Cli, CliError, Command, MethodArg, SplitArgs};

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = RunConfigFile::load(&cli.config)?;
    match cli.command {
        Command::Prepare { split, out } => prepare(&config, &split, out),
        Command::Run {
            split,
            method,
            variant,
            style,
            backend,
            in_context,
            strategy,
            limit,
            out,
            table,
        } => {
            let method = match method {
                MethodArg::Qlfr => ExperimentMethod::Qlfr {
                    variant: variant.unwrap_or(config.defaults.variant),
                },
                MethodArg::Direct => ExperimentMethod::Direct {
                    style: style.into(),
                },
            };
            let in_context = in_context
                .map(Into::into)
                .unwrap_or(config.defaults.in_context);
            let strategy = strategy.map(Into::into).unwrap_or(config.defaults.strategy);
            run(
                &config,
                &split,
                method,
                backend.as_deref(),
                in_context,
                strategy,
                limit,
                out,
                table,
            )
        }
        Command::Rationales {
            split,
            backend,
            cues,
            no_sse,
            no_da,
            out,
        } => rationales(
            &config,
            &split,
            backend.as_deref(),
            cues.as_deref(),
            RationaleFlags {
                sse: !no_sse,
                da: !no_da,
            },
            out,
        ),
        Command::Export {
            split,
            rationales,
            no_ecca,
            no_sse,
            no_da,
            lambda1,
            lambda2,
            out,
        } => export(
            &config,
            &split,
            rationales,
            ExportFlags {
                ecca: !no_ecca,
                sse: !no_sse,
                da: !no_da,
            },
            lambda1.unwrap_or(config.defaults.lambda1),
            lambda2.unwrap_or(config.defaults.lambda2),
            out,
        ),
        Command::Eval {
            split,
            preds,
            out,
            table,
        } => eval(&config, &split, &preds, out, table),
        Command::Cache { action } => cache(&config, action),
    }
}

fn load_corpus(config: &RunConfigFile, dataset: &str) -> Result<Corpus, CliError> {
    let entry = config.dataset(dataset)?;
    Ok(DatasetManifest::load(&entry.manifest)?.load_corpus()?)
}

fn dataset_dir(config: &RunConfigFile, dataset: &str) -> PathBuf {
    config.output_dir.join(dataset)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(Error::from)?
    );
    Ok(())
}

/// Experiment config with defaults filled in from the file.
fn experiment_config(
    config: &RunConfigFile,
    split: &SplitArgs,
    method: ExperimentMethod,
    backend: &ResolvedBackend,
    in_context: InContextMode,
    strategy: qlfr_core::classify::Strategy,
    limit: Option<usize>,
) -> ExperimentConfig {
    ExperimentConfig {
        dataset: split.dataset.clone(),
        seed: split.seed.unwrap_or(config.defaults.seed),
        per_class: split.per_class.unwrap_or(config.defaults.per_class),
        method,
        backend: backend.name.clone(),
        decoding: backend.decoding.clone(),
        in_context,
        strategy,
        train_ratio: split.train_ratio.unwrap_or(config.defaults.train_ratio),
        limit,
    }
}

fn splits_for(
    config: &RunConfigFile,
    split: &SplitArgs,
    corpus: &Corpus,
) -> Result<Splits, CliError> {
    let probe = ExperimentConfig {
        dataset: split.dataset.clone(),
        seed: split.seed.unwrap_or(config.defaults.seed),
        per_class: split.per_class.unwrap_or(config.defaults.per_class),
        method: ExperimentMethod::CmlEval {
            predictions: String::new(),
        },
        backend: String::new(),
        decoding: Default::default(),
        in_context: InContextMode::ZeroShot,
        strategy: qlfr_core::classify::Strategy::ParseText,
        train_ratio: split.train_ratio.unwrap_or(config.defaults.train_ratio),
        limit: None,
    };
    probe.validate()?;
    Ok(experiment_splits(&probe, corpus)?)
}

/// A configured backend behind the on-disk cache.
struct Session {
    backend: CachedBackend<Box<dyn Backend>>,
    decoding: Decoding,
    workers: usize,
}

fn cached(config: &RunConfigFile, backend: ResolvedBackend) -> Result<Session, CliError> {
    let cache = Cache::open(&config.cache_dir)?;
    let workers = backend.concurrency.max(1);
    Ok(Session {
        backend: CachedBackend::new(backend.backend, cache).with_concurrency(workers),
        decoding: backend.decoding,
        workers,
    })
}

fn prepare(
    config: &RunConfigFile,
    split: &SplitArgs,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let corpus = load_corpus(config, &split.dataset)?;
    let splits = splits_for(config, split, &corpus)?;
    let dir = out.unwrap_or_else(|| dataset_dir(config, &split.dataset).join("splits"));
    jsonl::write(&dir.join("train.jsonl"), &splits.train)?;
    jsonl::write(&dir.join("val.jsonl"), &splits.val)?;
    jsonl::write(&dir.join("test.jsonl"), &splits.test)?;
    let summary = json!({
        "dataset": split.dataset,
        "seed": splits.seed,
        "per_class": splits.per_class,
        "train": splits.train.len(),
        "val": splits.val.len(),
        "test": splits.test.len(),
        "train_ratio_percent": format!("{:.2}", 100.0 * splits.train.len() as f64 / corpus.len() as f64),
        "digest": splits.digest(),
        "dir": dir,
    });
    let mut body = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    body.push('\n');
    jsonl::write_bytes(&dir.join("splits.json"), body.as_bytes())?;
    print!("{body}");
    Ok(())
}

fn exemplars_for(
    config: &RunConfigFile,
    dataset: &str,
    corpus: &Corpus,
    registry: &qlfr_core::templates::TemplateRegistry,
    mode: InContextMode,
) -> Result<Vec<FewShotExemplar>, CliError> {
    if mode == InContextMode::ZeroShot {
        return Ok(Vec::new());
    }
    let path = config.dataset(dataset)?.exemplars.as_ref().ok_or_else(|| {
        CliError::Config(format!("one-shot runs need datasets.{dataset}.exemplars"))
    })?;
    Ok(load_exemplars(path, registry, corpus.label_set())?)
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &RunConfigFile,
    split: &SplitArgs,
    method: ExperimentMethod,
    backend: Option<&str>,
    in_context: InContextMode,
    strategy: qlfr_core::classify::Strategy,
    limit: Option<usize>,
    out: Option<PathBuf>,
    table: bool,
) -> Result<(), CliError> {
    let corpus = load_corpus(config, &split.dataset)?;
    let registry = config.registry()?;
    let resolved = config.backend(backend)?;
    let exp = experiment_config(
        config, split, method, &resolved, in_context, strategy, limit,
    );
    let exemplars = exemplars_for(config, &split.dataset, &corpus, &registry, in_context)?;
    let Session {
        backend, workers, ..
    } = cached(config, resolved)?;
    let tag = match &exp.method {
        ExperimentMethod::Qlfr { variant } => {
            format!("qlfr-{}-{}", variant.name(), mode_tag(in_context))
        }
        ExperimentMethod::Direct { style } => format!(
            "direct-{}",
            serde_json::to_value(style)
                .map_err(Error::from)?
                .as_str()
                .unwrap_or("style")
        ),
        ExperimentMethod::CmlEval { .. } => "cml-eval".into(),
    };
    let dir = out.unwrap_or_else(|| dataset_dir(config, &split.dataset).join(tag));
    let ctx = ExperimentContext {
        corpus: &corpus,
        backend: &backend,
        registry: &registry,
        exemplars: &exemplars,
        workers,
    };
    let output = run_experiment(&exp, &ctx, Some(&dir))?;
    tracing::info!(
        dir = %dir.display(),
        cache_hits = backend.cache().hits(),
        cache_misses = backend.cache().misses(),
        "run finished"
    );
    emit(&output.report, table)
}

fn mode_tag(mode: InContextMode) -> &'static str {
    match mode {
        InContextMode::ZeroShot => "zero_shot",
        InContextMode::OneShot => "one_shot",
    }
}

fn emit(report: &EvalReport, table: bool) -> Result<(), CliError> {
    if table {
        let name = match &report.config.method {
            ExperimentMethod::Qlfr { variant } => format!("qlfr/{}", variant.name()),
            ExperimentMethod::Direct { .. } => "direct".into(),
            ExperimentMethod::CmlEval { .. } => "cml".into(),
        };
        print!("{}", render_table(&[(name, report)]));
        Ok(())
    } else {
        print!("{}", report.to_json()?);
        Ok(())
    }
}

fn cue_profile(
    config: &RunConfigFile,
    dataset: &str,
    corpus: &Corpus,
    cues: Option<&str>,
) -> Result<CueProfile, CliError> {
    let name = cues
        .map(str::to_string)
        .or_else(|| config.dataset(dataset).ok().and_then(|d| d.cues.clone()))
        .unwrap_or_else(|| corpus.label_set().domain().to_string());
    config.cue_profile(&name)
}

fn rationales(
    config: &RunConfigFile,
    split: &SplitArgs,
    backend: Option<&str>,
    cues: Option<&str>,
    flags: RationaleFlags,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let corpus = load_corpus(config, &split.dataset)?;
    let splits = splits_for(config, split, &corpus)?;
    let cues = cue_profile(config, &split.dataset, &corpus, cues)?;
    let registry = config.registry()?;
    let Session {
        backend,
        decoding,
        workers,
    } = cached(config, config.backend(backend)?)?;
    let runner = ChainRunner::new(&backend, &registry, decoding);
    let result = generate_rationales(&splits.train, &cues, &runner, flags, workers);
    let path = out.unwrap_or_else(|| dataset_dir(config, &split.dataset).join("rationales.jsonl"));
    let run = result?;
    write_rationales(&path, &run.records)?;
    let side = |name: &str| {
        path.with_file_name(format!(
            "{}.{name}.jsonl",
            path.file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("rationales")
        ))
    };
    jsonl::write(&side("skipped"), &run.skipped)?;
    jsonl::write(&side("traces"), &run.traces)?;
    tracing::info!(
        cache_hits = backend.cache().hits(),
        cache_misses = backend.cache().misses(),
        "rationales finished"
    );
    print_json(&json!({
        "dataset": split.dataset,
        "records": run.records.len(),
        "skipped": run.skipped.len(),
        "split_hash": splits.digest(),
        "path": path,
    }))
}

fn export(
    config: &RunConfigFile,
    split: &SplitArgs,
    rationales: Option<PathBuf>,
    flags: ExportFlags,
    lambda1: f64,
    lambda2: f64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let corpus = load_corpus(config, &split.dataset)?;
    let splits = splits_for(config, split, &corpus)?;
    let base = dataset_dir(config, &split.dataset);
    let path = rationales.unwrap_or_else(|| base.join("rationales.jsonl"));
    let records = read_rationales(&path)?;
    let (records, manifest) = export_multitask(
        &split.dataset,
        &splits.digest(),
        &records,
        corpus.label_set(),
        flags,
        lambda1,
        lambda2,
    )?;
    let dir = out.unwrap_or_else(|| base.join("export"));
    write_export(&dir, &records, &manifest)?;
    print_json(&manifest)
}

fn eval(
    config: &RunConfigFile,
    split: &SplitArgs,
    preds: &Path,
    out: Option<PathBuf>,
    table: bool,
) -> Result<(), CliError> {
    let corpus = load_corpus(config, &split.dataset)?;
    let registry = config.registry()?;
    let exp = ExperimentConfig {
        dataset: split.dataset.clone(),
        seed: split.seed.unwrap_or(config.defaults.seed),
        per_class: split.per_class.unwrap_or(config.defaults.per_class),
        method: ExperimentMethod::CmlEval {
            predictions: preds.display().to_string(),
        },
        backend: "external".into(),
        decoding: Default::default(),
        in_context: InContextMode::ZeroShot,
        strategy: qlfr_core::classify::Strategy::ParseText,
        train_ratio: split.train_ratio.unwrap_or(config.defaults.train_ratio),
        limit: None,
    };
    let backend = qlfr_core::backend::MockBackend::new(Vec::new()).with_id("external");
    let ctx = ExperimentContext {
        corpus: &corpus,
        backend: &backend,
        registry: &registry,
        exemplars: &[],
        workers: 1,
    };
    let output = run_experiment(&exp, &ctx, None)?;
    if let Some(path) = out {
        let path = if path.is_dir() {
            path.join(REPORT_FILE)
        } else {
            path
        };
        jsonl::write_bytes(&path, output.report.to_json()?.as_bytes())?;
    }
    emit(&output.report, table)
}

fn cache(config: &RunConfigFile, action: CacheAction) -> Result<(), CliError> {
    let cache = Cache::open(&config.cache_dir)?;
    match action {
        CacheAction::Stats => {
            let stats = cache.stats()?;
            print_json(&json!({
                "root": cache.root(),
                "entries": stats.entries,
                "bytes": stats.bytes,
            }))
        }
        CacheAction::Clear => {
            cache.clear()?;
            print_json(&json!({"root": cache.root(), "cleared": true}))
        }
    }
}
