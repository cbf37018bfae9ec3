//! Accuracy, macro-F1, confusion matrices and the experiment runner.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, Decoding};
use crate::chains::{
    build_fewshot_context, ChainRunner, ChainTrace, ChainVariant, FewShotExemplar, InContextMode,
};
use crate::classify::{
    classification_step, predict_step, Prediction, PredictionFlag, PromptStyle, Strategy,
};
use crate::corpus::{sample_splits, subsample_train, Corpus, Example, LabelSet, Splits};
use crate::error::{Error, Result};
use crate::exec::{check_failure_threshold, parallel_map};
use crate::jsonl;
use crate::templates::TemplateRegistry;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Scores of one prediction set against its golds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]`, label-set order.
    pub confusion: Vec<Vec<usize>>,
    /// Per gold class, predictions that carried no label. Together with
    /// `confusion` these account for all `n` examples.
    pub unparsed: Vec<usize>,
    pub n: usize,
    /// Classes with no gold examples; their f1 is 0 and still averaged in.
    pub zero_support_classes: Vec<String>,
}

/// Pairs each gold with its prediction by example id. Every gold needs exactly
/// one prediction and vice versa.
fn align<'a>(preds: &'a [Prediction], golds: &[Example]) -> Result<Vec<&'a Prediction>> {
    if golds.is_empty() {
        return Err(Error::InvalidArgument(
            "nothing to score: no gold examples".into(),
        ));
    }
    if preds.len() != golds.len() {
        return Err(Error::IdMismatch(format!(
            "{} predictions for {} gold examples",
            preds.len(),
            golds.len()
        )));
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.example_id.as_str(), p).is_some() {
            return Err(Error::IdMismatch(format!(
                "duplicate prediction for {:?}",
                p.example_id
            )));
        }
    }
    golds
        .iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .copied()
                .ok_or_else(|| Error::IdMismatch(format!("no prediction for {:?}", g.id)))
        })
        .collect()
}

fn label_index(labels: &LabelSet, raw: &str, what: &str) -> Result<usize> {
    labels
        .resolve(raw)
        .and_then(|l| labels.index_of(l))
        .ok_or_else(|| {
            Error::InvalidArgument(format!("{what} label {raw:?} is not in the label set"))
        })
}

pub fn evaluate(preds: &[Prediction], golds: &[Example], labels: &LabelSet) -> Result<Metrics> {
    let aligned = align(preds, golds)?;
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut unparsed = vec![0usize; k];
    for (gold, pred) in golds.iter().zip(aligned) {
        let raw = gold.gold.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("example {:?} has no gold label", gold.id))
        })?;
        let g = label_index(labels, raw.as_str(), "gold")?;
        match &pred.label {
            Some(p) => confusion[g][label_index(labels, p.as_str(), "predicted")?] += 1,
            None => unparsed[g] += 1,
        }
    }

    let n = golds.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(k);
    let mut zero_support_classes = Vec::new();
    for (c, label) in labels.iter().enumerate() {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..k).map(|g| confusion[g][c]).sum();
        let support = confusion[c].iter().sum::<usize>() + unparsed[c];
        if support == 0 {
            zero_support_classes.push(label.to_string());
        }
        let precision = ratio(tp, predicted as f64);
        let recall = ratio(tp, support as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        per_class.push(ClassMetrics {
            label: label.to_string(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
    Ok(Metrics {
        accuracy: correct as f64 / n as f64,
        macro_f1,
        per_class,
        confusion,
        unparsed,
        n,
        zero_support_classes,
    })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Fraction of golds whose prediction is present and equal to the gold.
pub fn accuracy(preds: &[Prediction], golds: &[Example]) -> Result<f64> {
    let aligned = align(preds, golds)?;
    let correct = golds
        .iter()
        .zip(aligned)
        .filter(|(g, p)| match (&g.gold, &p.label) {
            (Some(g), Some(p)) => g.key() == p.key(),
            _ => false,
        })
        .count();
    Ok(correct as f64 / golds.len() as f64)
}

/// Unweighted mean of per-class F1 over every class in `labels`.
pub fn macro_f1(preds: &[Prediction], golds: &[Example], labels: &LabelSet) -> Result<f64> {
    Ok(evaluate(preds, golds, labels)?.macro_f1)
}

/// Maps predicted label strings onto the label set. Labels the set does not
/// know are dropped and flagged unparsed, so they score as wrong.
pub fn canonicalize_predictions(preds: &mut [Prediction], labels: &LabelSet) {
    for p in preds {
        if let Some(raw) = &p.label {
            match labels.resolve(raw.as_str()) {
                Some(l) => p.label = Some(l.clone()),
                None => {
                    p.label = None;
                    if !p.is_flagged(PredictionFlag::Unparsed) {
                        p.flags.push(PredictionFlag::Unparsed);
                    }
                }
            }
        }
    }
}

/// Scores predictions made outside this crate. Ids are looked up across the
/// whole corpus, so any split (or a mix) can be scored.
pub fn score_external(preds: &[Prediction], corpus: &Corpus) -> Result<Metrics> {
    let index = corpus.index();
    let golds = preds
        .iter()
        .map(|p| {
            index
                .get(p.example_id.as_str())
                .map(|e| (*e).clone())
                .ok_or_else(|| {
                    Error::IdMismatch(format!(
                        "{:?} is not in corpus {}",
                        p.example_id,
                        corpus.name()
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(preds, &golds, corpus.label_set())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentMethod {
    /// The enrichment chain, optionally ablated.
    Qlfr { variant: ChainVariant },
    /// A single classification prompt on the raw text.
    Direct { style: PromptStyle },
    /// Scores an existing predictions file.
    CmlEval { predictions: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub seed: u64,
    pub per_class: usize,
    pub method: ExperimentMethod,
    pub backend: String,
    pub decoding: Decoding,
    pub in_context: InContextMode,
    pub strategy: Strategy,
    pub train_ratio: f64,
    /// Score only the first `limit` test examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl ExperimentConfig {
    /// SHA-256 of the serialized config; field order is fixed, so equal
    /// configs hash equally.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_ratio must be in (0, 1], got {}",
                self.train_ratio
            )));
        }
        if self.limit == Some(0) {
            return Err(Error::InvalidArgument("limit must be positive".into()));
        }
        if matches!(self.method, ExperimentMethod::Direct { .. })
            && self.in_context != InContextMode::ZeroShot
        {
            return Err(Error::InvalidArgument(
                "in-context exemplars apply to the chain method only".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Examples whose inference failed at the backend.
    pub failures: usize,
    pub split_hash: String,
    pub run_config_hash: String,
    pub config: ExperimentConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
    pub traces: Vec<ChainTrace>,
}

/// Everything the runner needs besides the config.
pub struct ExperimentContext<'a> {
    pub corpus: &'a Corpus,
    pub backend: &'a dyn Backend,
    pub registry: &'a TemplateRegistry,
    pub exemplars: &'a [FewShotExemplar],
    pub workers: usize,
}

pub fn experiment_splits(config: &ExperimentConfig, corpus: &Corpus) -> Result<Splits> {
    let splits = sample_splits(corpus, config.per_class, config.seed)?;
    if config.train_ratio < 1.0 {
        subsample_train(&splits, config.train_ratio, config.seed)
    } else {
        Ok(splits)
    }
}

/// Runs the configured method over the test split and scores it. When
/// `out_dir` is given, predictions, traces and the report are written there.
pub fn run_experiment(
    config: &ExperimentConfig,
    ctx: &ExperimentContext<'_>,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let labels = ctx.corpus.label_set();
    let splits = experiment_splits(config, ctx.corpus)?;
    let mut test = splits.test.clone();
    if let Some(limit) = config.limit {
        test.truncate(limit);
    }

    let mut traces = Vec::new();
    let (predictions, metrics) = match &config.method {
        ExperimentMethod::Qlfr { variant } => {
            let prefix = build_fewshot_context(ctx.exemplars, labels, config.in_context)?;
            let runner = ChainRunner::new(ctx.backend, ctx.registry, config.decoding.clone())
                .with_strategy(config.strategy)
                .with_prefix(prefix);
            let results = parallel_map(&test, ctx.workers, |ex| {
                runner.run_sse_cot(ex, labels, *variant)
            });
            let mut predictions = Vec::with_capacity(test.len());
            for (ex, trace) in test.iter().zip(results) {
                let trace = trace?;
                predictions.push(trace_prediction(&ex.id, &trace));
                traces.push(trace);
            }
            let metrics = evaluate(&predictions, &test, labels)?;
            (predictions, metrics)
        }
        ExperimentMethod::Direct { style } => {
            let results = parallel_map(&test, ctx.workers, |ex| -> Result<Prediction> {
                let step = classification_step(ctx.registry, &ex.text, labels, *style)?;
                Ok(
                    match predict_step(
                        ctx.backend,
                        &step,
                        labels,
                        config.strategy,
                        &config.decoding,
                    ) {
                        Ok(p) => p.for_example(&ex.id),
                        Err(e) => Prediction::failed(&ex.id, &e),
                    },
                )
            });
            let predictions = results.into_iter().collect::<Result<Vec<_>>>()?;
            let metrics = evaluate(&predictions, &test, labels)?;
            (predictions, metrics)
        }
        ExperimentMethod::CmlEval { predictions } => {
            let mut preds: Vec<Prediction> = jsonl::read(Path::new(predictions))?;
            canonicalize_predictions(&mut preds, labels);
            let metrics = score_external(&preds, ctx.corpus)?;
            (preds, metrics)
        }
    };

    let failures = predictions
        .iter()
        .filter(|p| {
            p.is_flagged(PredictionFlag::BackendFailure) || p.is_flagged(PredictionFlag::Refused)
        })
        .count();
    let report = EvalReport {
        dataset: config.dataset.clone(),
        metrics,
        failures,
        split_hash: splits.digest(),
        run_config_hash: config.hash(),
        config: config.clone(),
    };
    if let Some(dir) = out_dir {
        jsonl::write(&dir.join(PREDICTIONS_FILE), &predictions)?;
        if !traces.is_empty() {
            jsonl::write(&dir.join(TRACES_FILE), &traces)?;
        }
        jsonl::write_bytes(&dir.join(REPORT_FILE), report.to_json()?.as_bytes())?;
    }
    check_failure_threshold(failures, predictions.len())?;
    Ok(ExperimentOutput {
        report,
        predictions,
        traces,
    })
}

/// The trace's prediction, or an absent-label prediction recording why the
/// chain stopped.
pub fn trace_prediction(example_id: &str, trace: &ChainTrace) -> Prediction {
    if let Some(p) = &trace.prediction {
        return p.clone().for_example(example_id);
    }
    let failure = trace.error.as_ref();
    let flag = match failure {
        Some(f) if f.refused => PredictionFlag::Refused,
        _ => PredictionFlag::BackendFailure,
    };
    Prediction {
        example_id: example_id.to_string(),
        label: None,
        method: crate::classify::Method::Parsed,
        raw_output: failure.map(|f| f.message.clone()).unwrap_or_default(),
        confidence: None,
        flags: vec![flag],
    }
}

/// Plain-text table of ACC/F1 pairs in percent, one row per run.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows
        .iter()
        .map(|(name, _)| name.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>6}",
        "method", "ACC", "F1", "n"
    );
    for (name, report) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>6}",
            name,
            report.metrics.accuracy * 100.0,
            report.metrics.macro_f1 * 100.0,
            report.metrics.n
        );
    }
    out
}
