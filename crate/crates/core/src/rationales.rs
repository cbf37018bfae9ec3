//! Rationale generation over the training split and multi-task export.
//!
//! Each training example yields up to three records: its label-augmented text
//! paired with the gold label, and its raw text paired with each enabled
//! rationale (the enrichment chain's rewrite and the domain chain's summary).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chains::{ChainRunner, ChainTrace, CueProfile};
use crate::classify::inject_labels;
use crate::corpus::{Example, Label, LabelSet};
use crate::error::{Error, Result};
use crate::exec::{check_failure_threshold, parallel_map};
use crate::jsonl;

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const EXPORT_FILE: &str = "multitask.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub example_id: String,
    pub text: String,
    pub gold: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sse_rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub da_rationale: Option<String>,
    pub provenance: Provenance,
}

impl RationaleRecord {
    pub fn validate(&self) -> Result<()> {
        let present = [&self.sse_rationale, &self.da_rationale];
        if present.iter().all(|r| r.is_none()) {
            return Err(Error::InvalidArgument(format!(
                "rationale record {:?} has no rationale",
                self.example_id
            )));
        }
        if present
            .iter()
            .flat_map(|r| r.as_deref())
            .any(|r| r.trim().is_empty())
        {
            return Err(Error::InvalidArgument(format!(
                "rationale record {:?} has an empty rationale",
                self.example_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleFlags {
    pub sse: bool,
    pub da: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedExample {
    pub example_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationaleRun {
    pub records: Vec<RationaleRecord>,
    pub skipped: Vec<SkippedExample>,
    pub traces: Vec<ChainTrace>,
}

/// Runs the enrichment chain through its rewrite step and/or the domain chain
/// over `train`. Examples whose chains fail are skipped with a reason; the
/// whole run fails if more than 10% are skipped.
pub fn generate_rationales(
    train: &[Example],
    cues: &CueProfile,
    runner: &ChainRunner<'_>,
    flags: RationaleFlags,
    workers: usize,
) -> Result<RationaleRun> {
    if !flags.sse && !flags.da {
        return Err(Error::InvalidArgument(
            "enable at least one of sse or da".into(),
        ));
    }
    for ex in train {
        ex.validate()?;
        if ex.gold.is_none() {
            return Err(Error::InvalidArgument(format!(
                "training example {:?} has no gold label",
                ex.id
            )));
        }
    }
    cues.validate()?;
    let provenance = Provenance {
        backend_id: runner.backend().id().to_string(),
        model_id: runner.decoding().model_id.clone(),
    };

    let outcomes = parallel_map(
        train,
        workers,
        |ex| -> Result<(Vec<ChainTrace>, Option<String>)> {
            let mut traces = Vec::new();
            if flags.sse {
                traces.push(runner.run_sse_rationale(ex)?);
            }
            if flags.da {
                traces.push(runner.run_da_cot(ex, cues)?);
            }
            let failure = traces.iter().find_map(|t| {
                t.error
                    .as_ref()
                    .map(|e| format!("{:?} step {}: {}", t.chain_kind, e.step_index, e.message))
            });
            Ok((traces, failure))
        },
    );

    let mut run = RationaleRun {
        records: Vec::new(),
        skipped: Vec::new(),
        traces: Vec::new(),
    };
    for (ex, outcome) in train.iter().zip(outcomes) {
        let (traces, failure) = outcome?;
        if let Some(reason) = failure {
            tracing::warn!(example = %ex.id, %reason, "skipping example");
            run.skipped.push(SkippedExample {
                example_id: ex.id.clone(),
                reason,
            });
        } else {
            let mut record = RationaleRecord {
                example_id: ex.id.clone(),
                text: ex.text.clone(),
                gold: ex.gold.clone().expect("checked above"),
                sse_rationale: None,
                da_rationale: None,
                provenance: provenance.clone(),
            };
            for trace in &traces {
                let rationale = trace.rationale().map(str::to_string);
                match trace.chain_kind {
                    crate::chains::ChainKind::Sse => record.sse_rationale = rationale,
                    crate::chains::ChainKind::Da => record.da_rationale = rationale,
                }
            }
            match record.validate() {
                Ok(()) => run.records.push(record),
                Err(e) => run.skipped.push(SkippedExample {
                    example_id: ex.id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        run.traces.extend(traces);
    }
    check_failure_threshold(run.skipped.len(), train.len())?;
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Label,
    Sse,
    Da,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Label => "label",
            Task::Sse => "sse",
            Task::Da => "da",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiTaskRecord {
    pub input: String,
    pub target: String,
    pub task: Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFlags {
    pub ecca: bool,
    pub sse: bool,
    pub da: bool,
}

impl Default for ExportFlags {
    fn default() -> Self {
        ExportFlags {
            ecca: true,
            sse: true,
            da: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub label: usize,
    pub sse: usize,
    pub da: usize,
}

impl TaskCounts {
    pub fn total(&self) -> usize {
        self.label + self.sse + self.da
    }

    fn bump(&mut self, task: Task) {
        match task {
            Task::Label => self.label += 1,
            Task::Sse => self.sse += 1,
            Task::Da => self.da += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportManifest {
    pub dataset: String,
    pub split_hash: String,
    pub counts: TaskCounts,
    pub total: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub flags: ExportFlags,
    /// Label names in label-set order, as rendered into augmented inputs.
    pub labels: Vec<String>,
    pub records_file: String,
}

impl ExportManifest {
    /// Checks `total = label × (1 + [sse] + [da])` and per-task counts.
    pub fn validate(&self) -> Result<()> {
        let n = self.counts.label;
        let expected = TaskCounts {
            label: n,
            sse: if self.flags.sse { n } else { 0 },
            da: if self.flags.da { n } else { 0 },
        };
        if self.counts != expected || self.total != expected.total() {
            return Err(Error::InvalidArgument(format!(
                "manifest counts {:?} (total {}) inconsistent with flags {:?}",
                self.counts, self.total, self.flags
            )));
        }
        check_lambda("lambda1", self.lambda1)?;
        check_lambda("lambda2", self.lambda2)
    }
}

fn check_lambda(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{name} must be a finite non-negative number, got {value}"
        )));
    }
    Ok(())
}

/// Pairs every record with its tasks: the label task first, then the
/// enrichment rationale, then the domain rationale.
pub fn export_multitask(
    dataset: &str,
    split_hash: &str,
    records: &[RationaleRecord],
    labels: &LabelSet,
    flags: ExportFlags,
    lambda1: f64,
    lambda2: f64,
) -> Result<(Vec<MultiTaskRecord>, ExportManifest)> {
    check_lambda("lambda1", lambda1)?;
    check_lambda("lambda2", lambda2)?;
    for rec in records {
        if flags.sse && rec.sse_rationale.is_none() {
            return Err(Error::MissingRationale {
                example_id: rec.example_id.clone(),
                task: "sse",
            });
        }
        if flags.da && rec.da_rationale.is_none() {
            return Err(Error::MissingRationale {
                example_id: rec.example_id.clone(),
                task: "da",
            });
        }
    }

    let mut out = Vec::with_capacity(records.len() * 3);
    let mut counts = TaskCounts::default();
    for rec in records {
        let gold = labels.resolve(rec.gold.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "gold {:?} of {:?} is not in the label set",
                rec.gold.as_str(),
                rec.example_id
            ))
        })?;
        let input = if flags.ecca {
            inject_labels(&rec.text, labels)?.rendered
        } else {
            rec.text.clone()
        };
        let mut push = |input: String, target: String, task: Task| {
            counts.bump(task);
            out.push(MultiTaskRecord {
                input,
                target,
                task,
            });
        };
        push(input, gold.as_str().to_string(), Task::Label);
        if flags.sse {
            push(
                rec.text.clone(),
                rec.sse_rationale.clone().expect("checked"),
                Task::Sse,
            );
        }
        if flags.da {
            push(
                rec.text.clone(),
                rec.da_rationale.clone().expect("checked"),
                Task::Da,
            );
        }
    }

    let manifest = ExportManifest {
        dataset: dataset.to_string(),
        split_hash: split_hash.to_string(),
        counts,
        total: out.len(),
        lambda1,
        lambda2,
        flags,
        labels: labels.iter().map(|l| l.as_str().to_string()).collect(),
        records_file: EXPORT_FILE.to_string(),
    };
    manifest.validate()?;
    Ok((out, manifest))
}

/// Writes `multitask.jsonl` and `manifest.json` into `dir`.
pub fn write_export(
    dir: &Path,
    records: &[MultiTaskRecord],
    manifest: &ExportManifest,
) -> Result<(PathBuf, PathBuf)> {
    let records_path = dir.join(&manifest.records_file);
    let manifest_path = dir.join(MANIFEST_FILE);
    jsonl::write(&records_path, records)?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    jsonl::write_bytes(&manifest_path, json.as_bytes())?;
    Ok((records_path, manifest_path))
}

/// Reads an export directory back, checking the records against the manifest.
pub fn read_export(dir: &Path) -> Result<(Vec<MultiTaskRecord>, ExportManifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let content =
        std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ExportManifest = serde_json::from_str(&content)?;
    manifest.validate()?;
    let records: Vec<MultiTaskRecord> = jsonl::read(&dir.join(&manifest.records_file))?;
    let mut counts = TaskCounts::default();
    for rec in &records {
        counts.bump(rec.task);
    }
    if counts != manifest.counts {
        return Err(Error::CountMismatch {
            name: manifest.dataset.clone(),
            expected: manifest.total,
            found: records.len(),
        });
    }
    Ok((records, manifest))
}

pub fn write_rationales(path: &Path, records: &[RationaleRecord]) -> Result<()> {
    jsonl::write(path, records)
}

pub fn read_rationales(path: &Path) -> Result<Vec<RationaleRecord>> {
    let records: Vec<RationaleRecord> = jsonl::read(path)?;
    for rec in &records {
        rec.validate()?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, Decoding, MockBackend, MockRule};
    use crate::templates::TemplateRegistry;

    fn labels() -> LabelSet {
        LabelSet::new("news", ["health", "sport", "world"]).unwrap()
    }

    fn record(i: usize, sse: bool, da: bool) -> RationaleRecord {
        let gold = labels().labels()[i % 3].clone();
        RationaleRecord {
            example_id: format!("{i:06}"),
            text: format!("text number {i}"),
            gold,
            sse_rationale: sse.then(|| format!("rewrite {i}")),
            da_rationale: da.then(|| format!("summary {i}")),
            provenance: Provenance {
                backend_id: "mock".into(),
                model_id: "m".into(),
            },
        }
    }

    fn mock() -> MockBackend {
        MockBackend::new(vec![
            MockRule::refusal("FORBIDDEN"),
            MockRule::text("identify key concepts", "concepts"),
            MockRule::text("retrieve related", "knowledge"),
            MockRule::text("Refine and enhance", "the rewrite"),
            MockRule::text("identify the key components", "components"),
            MockRule::text("Provide a summary", "the summary"),
        ])
    }

    fn train(n: usize) -> Vec<Example> {
        let labels = labels();
        (0..n)
            .map(|i| {
                Example::new(
                    format!("{i:06}"),
                    &format!("item {i}"),
                    Some(labels.labels()[i % 3].clone()),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn call_counts_per_flag_combination() {
        let reg = TemplateRegistry::builtin();
        let backend = CountingBackend::new(mock());
        let runner = ChainRunner::new(&backend, &reg, Decoding::for_model("m"));
        let one = train(1);

        let run = generate_rationales(
            &one,
            &CueProfile::news(),
            &runner,
            RationaleFlags {
                sse: true,
                da: false,
            },
            1,
        )
        .unwrap();
        assert_eq!(backend.calls(), 3);
        assert_eq!(run.records[0].sse_rationale.as_deref(), Some("the rewrite"));
        assert!(run.records[0].da_rationale.is_none());

        backend.reset();
        let run = generate_rationales(
            &one,
            &CueProfile::news(),
            &runner,
            RationaleFlags {
                sse: true,
                da: true,
            },
            1,
        )
        .unwrap();
        assert_eq!(backend.calls(), 5);
        assert_eq!(run.records[0].da_rationale.as_deref(), Some("the summary"));
        assert_eq!(run.records[0].provenance.backend_id, "mock");
    }

    #[test]
    fn failures_skip_then_abort_above_threshold() {
        let reg = TemplateRegistry::builtin();
        let backend = mock();
        let runner = ChainRunner::new(&backend, &reg, Decoding::for_model("m"));
        let flags = RationaleFlags {
            sse: true,
            da: true,
        };
        let mut examples = train(10);
        examples[3].text = "FORBIDDEN words".into();
        let run = generate_rationales(&examples, &CueProfile::news(), &runner, flags, 4).unwrap();
        assert_eq!(run.records.len(), 9);
        assert_eq!(run.skipped.len(), 1);
        assert_eq!(run.skipped[0].example_id, "000003");

        examples[5].text = "FORBIDDEN too".into();
        let err =
            generate_rationales(&examples, &CueProfile::news(), &runner, flags, 4).unwrap_err();
        assert!(matches!(
            err,
            Error::FailureThreshold {
                failed: 2,
                total: 10,
                ..
            }
        ));
    }

    #[test]
    fn export_counts_follow_flags() {
        let records: Vec<_> = (0..10).map(|i| record(i, true, true)).collect();
        for (sse, da) in [(false, false), (true, false), (false, true), (true, true)] {
            let flags = ExportFlags {
                ecca: true,
                sse,
                da,
            };
            let (out, manifest) =
                export_multitask("d", "h", &records, &labels(), flags, 1.0, 1.0).unwrap();
            assert_eq!(out.len(), 10 * (1 + sse as usize + da as usize));
            assert_eq!(manifest.total, out.len());
            assert_eq!(manifest.counts.label, 10);
        }
    }

    #[test]
    fn label_inputs_follow_ecca_flag() {
        let records = vec![record(1, true, false)];
        let flags = ExportFlags {
            ecca: true,
            sse: true,
            da: false,
        };
        let (out, _) = export_multitask("d", "h", &records, &labels(), flags, 0.5, 0.5).unwrap();
        assert_eq!(out[0].input, "health sport world text number 1");
        assert_eq!(out[0].target, "sport");
        assert_eq!(out[1].input, "text number 1");
        assert_eq!(out[1].target, "rewrite 1");

        let flags = ExportFlags {
            ecca: false,
            ..flags
        };
        let (out, manifest) =
            export_multitask("d", "h", &records, &labels(), flags, 0.5, 0.5).unwrap();
        assert_eq!(out[0].input, "text number 1");
        assert_eq!((manifest.lambda1, manifest.lambda2), (0.5, 0.5));
    }

    #[test]
    fn missing_rationale_is_named() {
        let records = vec![record(0, true, false)];
        let err = export_multitask(
            "d",
            "h",
            &records,
            &labels(),
            ExportFlags::default(),
            1.0,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingRationale { task: "da", .. }));
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<_> = (0..4).map(|i| record(i, true, true)).collect();
        let (out, manifest) = export_multitask(
            "d",
            "h",
            &records,
            &labels(),
            ExportFlags::default(),
            1.0,
            1.0,
        )
        .unwrap();
        write_export(dir.path(), &out, &manifest).unwrap();
        let (back, back_manifest) = read_export(dir.path()).unwrap();
        assert_eq!(back, out);
        assert_eq!(back_manifest, manifest);

        let path = dir.path().join("r.jsonl");
        write_rationales(&path, &records).unwrap();
        assert_eq!(read_rationales(&path).unwrap(), records);
    }
}
