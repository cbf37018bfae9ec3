//! Labeled short-text corpora, dataset manifests and the seeded split protocol.
//!
//! Every class contributes `per_class` sampled examples; the first half of each
//! class sample becomes training data, the second half validation data, and all
//! unsampled examples form the test split.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A category name. Equality is exact on the declared name; lookups against a
/// [`LabelSet`] go through [`Label::normalize`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let trimmed = name.trim();
        if trimmed.is_empty() {
            return Err(Error::InvalidArgument("label name is empty".into()));
        }
        Ok(Label(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Trim + case-fold. Punctuation and underscores are kept ("U.S.", "sci_tech").
    pub fn normalize(raw: &str) -> String {
        raw.trim().to_lowercase()
    }

    pub fn key(&self) -> String {
        Self::normalize(&self.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered, duplicate-free set of labels. Order is significant: label
/// injection, prompt enumeration and tie-breaks all follow it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSetRepr", into = "LabelSetRepr")]
pub struct LabelSet {
    domain: String,
    labels: Vec<Label>,
}

#[derive(Serialize, Deserialize)]
struct LabelSetRepr {
    domain: String,
    labels: Vec<String>,
}

impl TryFrom<LabelSetRepr> for LabelSet {
    type Error = Error;

    fn try_from(repr: LabelSetRepr) -> Result<Self> {
        LabelSet::new(repr.domain, repr.labels)
    }
}

impl From<LabelSet> for LabelSetRepr {
    fn from(set: LabelSet) -> Self {
        LabelSetRepr {
            domain: set.domain,
            labels: set.labels.into_iter().map(|l| l.0).collect(),
        }
    }
}

impl LabelSet {
    pub fn new<I, S>(domain: impl Into<String>, names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut labels = Vec::new();
        for name in names {
            let label = Label::new(name)?;
            if !seen.insert(label.key()) {
                return Err(Error::DuplicateLabel(label.0));
            }
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("label set is empty".into()));
        }
        Ok(LabelSet {
            domain: domain.into(),
            labels,
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Label> {
        self.labels.iter()
    }

    /// Finds the declared label matching `raw` after normalization.
    pub fn resolve(&self, raw: &str) -> Option<&Label> {
        let key = Label::normalize(raw);
        self.labels.iter().find(|l| l.key() == key)
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.labels.contains(label)
    }

    pub fn index_of(&self, label: &Label) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl<'a> IntoIterator for &'a LabelSet {
    type Item = &'a Label;
    type IntoIter = std::slice::Iter<'a, Label>;

    fn into_iter(self) -> Self::IntoIter {
        self.labels.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    #[serde(default, rename = "label", skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
}

impl Example {
    /// Builds an example, trimming the text. Fails if the trimmed text is empty.
    pub fn new(id: impl Into<String>, text: &str, gold: Option<Label>) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::InvalidArgument("example text is empty".into()));
        }
        Ok(Example {
            id: id.into(),
            text: text.to_string(),
            gold,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "example {:?} has empty text",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    label_set: LabelSet,
    examples: Vec<Example>,
}

impl Corpus {
    /// Validates id uniqueness, non-empty texts and gold membership.
    pub fn new(
        name: impl Into<String>,
        label_set: LabelSet,
        examples: Vec<Example>,
    ) -> Result<Self> {
        let mut ids = HashSet::with_capacity(examples.len());
        for ex in &examples {
            ex.validate()?;
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
            if let Some(gold) = &ex.gold {
                if !label_set.contains(gold) {
                    return Err(Error::InvalidArgument(format!(
                        "example {:?} has label {:?} outside the label set",
                        ex.id,
                        gold.as_str()
                    )));
                }
            }
        }
        Ok(Corpus {
            name: name.into(),
            label_set,
            examples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Id → example lookup table.
    pub fn index(&self) -> HashMap<&str, &Example> {
        self.examples.iter().map(|e| (e.id.as_str(), e)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" => Some(Format::Jsonl),
            "tsv" => Some(Format::Tsv),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: Option<serde_json::Value>,
    text: Option<String>,
    label: Option<String>,
}

fn line_id(index: usize, total: usize) -> String {
    let width = total.to_string().len().max(6);
    format!("{index:0width$}")
}

/// Reads a JSONL (`{id?, text, label}`) or TSV (`text<TAB>label`) file.
///
/// Blank lines are skipped. Records without an id get their zero-padded
/// 0-based line index. Line numbers in errors are 1-based.
pub fn load_corpus(path: &Path, format: Format, label_set: &LabelSet) -> Result<Corpus> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = content.lines().collect();
    let total = lines.len();
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut examples = Vec::new();
    for (idx, raw) in lines.iter().enumerate() {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, text, label) = match format {
            Format::Jsonl => {
                let rec: JsonlRecord = serde_json::from_str(raw)
                    .map_err(|e| malformed(lineno, format!("invalid JSON: {e}")))?;
                let id = match rec.id {
                    None | Some(serde_json::Value::Null) => line_id(idx, total),
                    Some(serde_json::Value::String(s)) => s,
                    Some(serde_json::Value::Number(n)) => n.to_string(),
                    Some(other) => {
                        return Err(malformed(
                            lineno,
                            format!("id must be a string, got {other}"),
                        ))
                    }
                };
                let text = rec
                    .text
                    .ok_or_else(|| malformed(lineno, "missing \"text\" field".into()))?;
                let label = rec
                    .label
                    .ok_or_else(|| malformed(lineno, "missing \"label\" field".into()))?;
                (id, text, label)
            }
            Format::Tsv => {
                let (text, label) = raw
                    .rsplit_once('\t')
                    .ok_or_else(|| malformed(lineno, "expected text<TAB>label".into()))?;
                (line_id(idx, total), text.to_string(), label.to_string())
            }
        };
        let gold = label_set
            .resolve(&label)
            .cloned()
            .ok_or_else(|| Error::UnknownLabel {
                path: path.to_path_buf(),
                line: lineno,
                label: label.clone(),
            })?;
        let example = Example::new(id, &text, Some(gold))
            .map_err(|_| malformed(lineno, "text is empty".into()))?;
        examples.push(example);
    }
    if examples.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();
    Corpus::new(name, label_set.clone(), examples)
}

/// Dataset manifest (TOML). `path` is resolved relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub domain: Option<String>,
    pub labels: Vec<String>,
    #[serde(default)]
    pub expected_count: Option<usize>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = toml::from_str(&content)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        if manifest.path.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.path = dir.join(&manifest.path);
            }
        }
        Ok(manifest)
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(
            self.domain.clone().unwrap_or_else(|| self.name.clone()),
            self.labels.iter().cloned(),
        )
    }

    /// Loads the corpus and checks the declared record count.
    pub fn load_corpus(&self) -> Result<Corpus> {
        let format = self
            .format
            .or_else(|| Format::from_path(&self.path))
            .ok_or_else(|| {
                Error::Config(format!(
                    "dataset {}: cannot infer format of {}",
                    self.name,
                    self.path.display()
                ))
            })?;
        let corpus = load_corpus(&self.path, format, &self.label_set()?)?;
        if let Some(expected) = self.expected_count {
            if corpus.len() != expected {
                return Err(Error::CountMismatch {
                    name: self.name.clone(),
                    expected,
                    found: corpus.len(),
                });
            }
        }
        Ok(Corpus {
            name: self.name.clone(),
            ..corpus
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub seed: u64,
    pub per_class: usize,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    /// SHA-256 over the ordered ids of each split.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, part) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for ex in part {
                hasher.update(ex.id.as_bytes());
                hasher.update([0u8]);
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn group_by_label<'a>(examples: &'a [Example], labels: &LabelSet) -> Result<Vec<Vec<&'a Example>>> {
    let mut groups: Vec<Vec<&Example>> = vec![Vec::new(); labels.len()];
    for ex in examples {
        let gold = ex.gold.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("example {:?} has no gold label", ex.id))
        })?;
        let idx = labels.index_of(gold).ok_or_else(|| {
            Error::InvalidArgument(format!("label {:?} not in label set", gold.as_str()))
        })?;
        groups[idx].push(ex);
    }
    Ok(groups)
}

/// Draws `per_class` examples per class without replacement; first half of
/// each draw goes to train, second half to val, everything else to test.
///
/// Classes are visited in label-set order with one ChaCha8 stream seeded from
/// `seed`, so the result depends only on corpus contents, `per_class` and `seed`.
pub fn sample_splits(corpus: &Corpus, per_class: usize, seed: u64) -> Result<Splits> {
    if per_class == 0 || !per_class.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "per_class must be a positive even integer, got {per_class}"
        )));
    }
    let labels = corpus.label_set();
    let groups = group_by_label(corpus.examples(), labels)?;
    for (label, group) in labels.iter().zip(&groups) {
        if group.len() < per_class {
            return Err(Error::InsufficientClass {
                label: label.to_string(),
                available: group.len(),
                required: per_class,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = per_class / 2;
    let mut train = Vec::with_capacity(half * labels.len());
    let mut val = Vec::with_capacity(half * labels.len());
    let mut sampled = HashSet::new();
    for group in &groups {
        let mut pool = group.clone();
        let (drawn, _) = pool.partial_shuffle(&mut rng, per_class);
        for (i, ex) in drawn.iter().enumerate() {
            sampled.insert(ex.id.as_str());
            if i < half {
                train.push((*ex).clone());
            } else {
                val.push((*ex).clone());
            }
        }
    }
    let test = corpus
        .examples()
        .iter()
        .filter(|e| !sampled.contains(e.id.as_str()))
        .cloned()
        .collect();
    Ok(Splits {
        seed,
        per_class,
        train,
        val,
        test,
    })
}

/// Per-class stratified subsample of the training split keeping
/// `ceil(ratio * class_count)` examples of each class. Val and test are untouched.
pub fn subsample_train(splits: &Splits, ratio: f64, seed: u64) -> Result<Splits> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ratio must be in (0, 1], got {ratio}"
        )));
    }
    // classes in first-appearance order
    let mut order: Vec<&Label> = Vec::new();
    let mut members: HashMap<&Label, Vec<usize>> = HashMap::new();
    for (i, ex) in splits.train.iter().enumerate() {
        let gold = ex.gold.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("training example {:?} has no gold label", ex.id))
        })?;
        members
            .entry(gold)
            .or_insert_with(|| {
                order.push(gold);
                Vec::new()
            })
            .push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = HashSet::new();
    for label in order {
        let idxs = &members[label];
        // the epsilon absorbs float error such as 0.3 * 10 = 3.0000000000000004
        let count = ((ratio * idxs.len() as f64) - 1e-9).ceil() as usize;
        if count == 0 {
            return Err(Error::InvalidArgument(format!(
                "ratio {ratio} would empty class {label:?}"
            )));
        }
        let mut pool = idxs.clone();
        let (drawn, _) = pool.partial_shuffle(&mut rng, count);
        keep.extend(drawn.iter().copied());
    }
    let train = splits
        .train
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, e)| e.clone())
        .collect();
    Ok(Splits {
        train,
        ..splits.clone()
    })
}

/// Builds a labeled corpus of `size` placeholder texts spread as evenly as
/// possible over `classes` labels named `c00`, `c01`, ... Used to reproduce
/// dataset shapes without the original text.
pub fn synthetic_corpus(name: &str, size: usize, classes: usize) -> Result<Corpus> {
    if classes == 0 {
        return Err(Error::InvalidArgument("classes must be positive".into()));
    }
    let names: Vec<String> = (0..classes).map(|c| format!("c{c:02}")).collect();
    let labels = LabelSet::new(name, names)?;
    let examples = (0..size)
        .map(|i| {
            let label = labels.labels()[i % classes].clone();
            Example::new(
                line_id(i, size),
                &format!("synthetic text {i} about {label}"),
                Some(label),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(name, labels, examples)
}

/// Writes a corpus as normalized JSONL (`{id, text, label}` per line).
pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    crate::jsonl::write(path, corpus.examples())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn sentiment() -> LabelSet {
        LabelSet::new("sentiment", ["positive", "negative"]).unwrap()
    }

    #[test]
    fn loads_minimal_jsonl() {
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"a masterpiece\",\"label\":\"positive\"}\n{\"text\":\"dull\",\"label\":\"Negative \"}\n",
            ".jsonl",
        );
        let corpus = load_corpus(f.path(), Format::Jsonl, &sentiment()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.examples()[1].id, "000001");
        assert_eq!(
            corpus.examples()[1].gold.as_ref().unwrap().as_str(),
            "negative"
        );
    }

    #[test]
    fn missing_text_names_line() {
        let f = write_tmp(
            "{\"text\":\"ok\",\"label\":\"positive\"}\n{\"label\":\"negative\"}\n",
            ".jsonl",
        );
        let err = load_corpus(f.path(), Format::Jsonl, &sentiment()).unwrap_err();
        match err {
            Error::Malformed { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("text"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_label_and_empty_file_rejected() {
        let f = write_tmp("{\"text\":\"x\",\"label\":\"neutral\"}\n", ".jsonl");
        assert!(matches!(
            load_corpus(f.path(), Format::Jsonl, &sentiment()),
            Err(Error::UnknownLabel { line: 1, .. })
        ));
        let empty = write_tmp("\n\n", ".jsonl");
        assert!(matches!(
            load_corpus(empty.path(), Format::Jsonl, &sentiment()),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn loads_tsv() {
        let f = write_tmp("great film\tpositive\nawful\tnegative\n", ".tsv");
        let corpus = load_corpus(f.path(), Format::Tsv, &sentiment()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.examples()[0].text, "great film");
    }

    #[test]
    fn label_normalization_keeps_punctuation() {
        let labels = LabelSet::new("news", ["U.S.", "sci_tech"]).unwrap();
        assert_eq!(labels.resolve(" u.s. ").unwrap().as_str(), "U.S.");
        assert_eq!(labels.resolve("SCI_TECH").unwrap().as_str(), "sci_tech");
        assert!(labels.resolve("us").is_none());
        assert!(labels.resolve("sci tech").is_none());
        assert!(matches!(
            LabelSet::new("x", ["Sport", "sport "]),
            Err(Error::DuplicateLabel(_))
        ));
    }

    #[test]
    fn synthetic_ohsumed_shape() {
        let corpus = synthetic_corpus("ohsumed", 7400, 23).unwrap();
        assert_eq!(corpus.len(), 7400);
        assert_eq!(corpus.label_set().len(), 23);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let corpus = synthetic_corpus("ohsumed", 7400, 23).unwrap();
        let splits = sample_splits(&corpus, 40, 7).unwrap();
        assert_eq!(splits.train.len(), 460);
        assert_eq!(splits.val.len(), 460);
        assert_eq!(splits.test.len(), 7400 - 920);

        let small = synthetic_corpus("mr", 10662, 2).unwrap();
        let s = sample_splits(&small, 40, 1).unwrap();
        assert_eq!(s.train.len(), 40);
        assert_eq!(format!("{:.2}", 100.0 * 40.0 / 10662.0), "0.38");

        let a = sample_splits(&small, 2, 99).unwrap();
        let b = sample_splits(&small, 2, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn per_class_counts_are_balanced() {
        let corpus = synthetic_corpus("snippets", 12340, 8).unwrap();
        let splits = sample_splits(&corpus, 40, 3).unwrap();
        for label in corpus.label_set() {
            let t = splits
                .train
                .iter()
                .filter(|e| e.gold.as_ref() == Some(label))
                .count();
            let v = splits
                .val
                .iter()
                .filter(|e| e.gold.as_ref() == Some(label))
                .count();
            assert_eq!((t, v), (20, 20));
        }
    }

    #[test]
    fn insufficient_class_named() {
        let labels = LabelSet::new("d", ["big", "tiny"]).unwrap();
        let mut examples = Vec::new();
        for i in 0..10 {
            examples.push(
                Example::new(format!("b{i}"), "text", labels.resolve("big").cloned()).unwrap(),
            );
        }
        examples.push(Example::new("t0", "text", labels.resolve("tiny").cloned()).unwrap());
        let corpus = Corpus::new("d", labels, examples).unwrap();
        match sample_splits(&corpus, 4, 0) {
            Err(Error::InsufficientClass {
                label, available, ..
            }) => {
                assert_eq!(label, "tiny");
                assert_eq!(available, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            sample_splits(&corpus, 3, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn subsample_ratios() {
        let corpus = synthetic_corpus("tmn", 700, 7).unwrap();
        let splits = sample_splits(&corpus, 40, 5).unwrap();
        assert_eq!(splits.train.len(), 140);

        let same = subsample_train(&splits, 1.0, 11).unwrap();
        assert_eq!(same, splits);

        let half = subsample_train(&splits, 0.5, 11).unwrap();
        assert_eq!(half.train.len(), 70);
        assert_eq!(half.val, splits.val);
        assert_eq!(half.test, splits.test);
        for label in corpus.label_set() {
            assert_eq!(
                half.train
                    .iter()
                    .filter(|e| e.gold.as_ref() == Some(label))
                    .count(),
                10
            );
        }

        let other = subsample_train(&splits, 0.5, 12).unwrap();
        assert_eq!(other.train.len(), 70);
        assert_ne!(other.train, half.train);

        // 0.3 * 20 must give 6, not 7
        assert_eq!(subsample_train(&splits, 0.3, 1).unwrap().train.len(), 42);
        assert!(subsample_train(&splits, 0.0, 1).is_err());
        assert!(subsample_train(&splits, 1.5, 1).is_err());
    }

    #[test]
    fn manifest_checks_count() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("d.jsonl"),
            "{\"text\":\"a\",\"label\":\"positive\"}\n{\"text\":\"b\",\"label\":\"negative\"}\n",
        )
        .unwrap();
        let manifest_path = dir.path().join("d.toml");
        fs::write(
            &manifest_path,
            "name = \"toy\"\npath = \"d.jsonl\"\nlabels = [\"positive\", \"negative\"]\nexpected_count = 3\n",
        )
        .unwrap();
        let manifest = DatasetManifest::load(&manifest_path).unwrap();
        assert!(matches!(
            manifest.load_corpus(),
            Err(Error::CountMismatch {
                expected: 3,
                found: 2,
                ..
            })
        ));
    }
}
