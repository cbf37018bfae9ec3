//! Label injection, classification prompts and turning model output into a
//! [`Prediction`].

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, CandidateScore, CompletionRequest, Decoding};
use crate::corpus::{Label, LabelSet};
use crate::error::{Error, Result};
use crate::templates::{
    and_list, quoted_list, RenderedStep, TemplateRegistry, CLASSIFY_BARE, CLASSIFY_VERBOSE,
    SSE_CLASSIFY,
};

pub const ECCA_SEPARATOR: &str = " ";

/// Input text prefixed with every label name, in label-set order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedText {
    pub original: String,
    pub label_set: LabelSet,
    pub rendered: String,
    separator: String,
}

impl AugmentedText {
    /// Removes the label prefix, returning the original text.
    pub fn strip_labels(&self) -> Option<&str> {
        let mut rest = self.rendered.as_str();
        for label in &self.label_set {
            rest = rest.strip_prefix(label.as_str())?;
            rest = rest.strip_prefix(self.separator.as_str())?;
        }
        Some(rest)
    }
}

pub fn inject_labels(text: &str, labels: &LabelSet) -> Result<AugmentedText> {
    inject_labels_with(text, labels, ECCA_SEPARATOR)
}

/// `l1 ⊕ l2 ⊕ … ⊕ lm ⊕ text` joined by `separator`.
pub fn inject_labels_with(text: &str, labels: &LabelSet, separator: &str) -> Result<AugmentedText> {
    if text.trim().is_empty() {
        return Err(Error::InvalidArgument(
            "cannot inject labels into empty text".into(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("label set is empty".into()));
    }
    let mut rendered = String::new();
    for label in labels {
        rendered.push_str(label.as_str());
        rendered.push_str(separator);
    }
    rendered.push_str(text);
    Ok(AugmentedText {
        original: text.to_string(),
        label_set: labels.clone(),
        rendered,
        separator: separator.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    /// Step-4 instruction with quoted label enumeration.
    QlfrStep4,
    /// "Categorize this text: '...'."
    Bare,
    /// Full sentence prompt listing the labels unquoted.
    Verbose,
}

/// Context and instruction of the classification prompt for `content`.
pub fn classification_step(
    registry: &TemplateRegistry,
    content: &str,
    labels: &LabelSet,
    style: PromptStyle,
) -> Result<RenderedStep> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("label set is empty".into()));
    }
    let names: Vec<&str> = labels.iter().map(Label::as_str).collect();
    match style {
        PromptStyle::QlfrStep4 => Ok(RenderedStep {
            context: registry.short_text_context(content)?,
            instruction: registry
                .render(SSE_CLASSIFY, &[("quoted_labels", &quoted_list(&names))])?,
        }),
        PromptStyle::Bare => Ok(RenderedStep {
            context: String::new(),
            instruction: registry.render(CLASSIFY_BARE, &[("text", content)])?,
        }),
        PromptStyle::Verbose => Ok(RenderedStep {
            context: String::new(),
            instruction: registry.render(
                CLASSIFY_VERBOSE,
                &[("text", content), ("labels", &and_list(&names))],
            )?,
        }),
    }
}

pub fn build_classification_prompt(
    registry: &TemplateRegistry,
    content: &str,
    labels: &LabelSet,
    style: PromptStyle,
) -> Result<String> {
    Ok(classification_step(registry, content, labels, style)?.prompt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Parsed,
    Scored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionFlag {
    /// No label name found in the output.
    Unparsed,
    /// Scoring was requested but unavailable; the output was parsed instead.
    ScoringFallback,
    /// The provider refused the request.
    Refused,
    /// The backend failed for this example.
    BackendFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub label: Option<Label>,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<PredictionFlag>,
}

fn default_method() -> Method {
    Method::Parsed
}

impl Prediction {
    pub fn for_example(mut self, id: impl Into<String>) -> Self {
        self.example_id = id.into();
        self
    }

    /// Absent-label prediction recording a backend failure.
    pub fn failed(id: impl Into<String>, err: &BackendError) -> Self {
        let flag = match err {
            BackendError::Refusal(_) => PredictionFlag::Refused,
            _ => PredictionFlag::BackendFailure,
        };
        Prediction {
            example_id: id.into(),
            label: None,
            method: Method::Parsed,
            raw_output: err.to_string(),
            confidence: None,
            flags: vec![flag],
        }
    }

    pub fn is_flagged(&self, flag: PredictionFlag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Finds the label named in free-form output.
///
/// Matching is case-insensitive substring search. Longer label names take
/// priority over shorter ones; among labels of equal length the earliest
/// occurrence in `raw` wins. No match gives an absent label flagged
/// [`PredictionFlag::Unparsed`].
pub fn extract_label(raw: &str, labels: &LabelSet) -> Prediction {
    let haystack = raw.to_lowercase();
    let mut best: Option<(usize, usize, &Label)> = None; // (name length, position, label)
    for label in labels {
        let needle = label.as_str().to_lowercase();
        let Some(pos) = haystack.find(&needle) else {
            continue;
        };
        let len = needle.chars().count();
        let better = match best {
            None => true,
            Some((blen, bpos, _)) => len > blen || (len == blen && pos < bpos),
        };
        if better {
            best = Some((len, pos, label));
        }
    }
    let label = best.map(|(_, _, l)| l.clone());
    let flags = if label.is_none() {
        vec![PredictionFlag::Unparsed]
    } else {
        Vec::new()
    };
    Prediction {
        example_id: String::new(),
        label,
        method: Method::Parsed,
        raw_output: raw.to_string(),
        confidence: None,
        flags,
    }
}

/// Index of the highest score; exact ties go to the earliest candidate.
pub fn argmax(scores: &[CandidateScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b].score >= s.score => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ScoredArgmax,
    ParseText,
}

/// Runs one classification step against a backend.
pub fn predict_step(
    backend: &dyn Backend,
    step: &RenderedStep,
    labels: &LabelSet,
    strategy: Strategy,
    decoding: &Decoding,
) -> Result<Prediction, BackendError> {
    let prompt = step.prompt();
    let mut fallback = false;
    if strategy == Strategy::ScoredArgmax {
        if backend.supports_scoring() {
            match backend.score_candidates(&prompt, labels) {
                Ok(scores) => {
                    crate::backend::check_scores(&scores, labels)?;
                    let best = argmax(&scores).expect("label set is non-empty");
                    return Ok(Prediction {
                        example_id: String::new(),
                        label: Some(scores[best].label.clone()),
                        method: Method::Scored,
                        raw_output: serde_json::to_string(&scores).expect("scores serialize"),
                        confidence: Some(scores[best].score),
                        flags: Vec::new(),
                    });
                }
                Err(BackendError::ScoringUnsupported) => fallback = true,
                Err(e) => return Err(e),
            }
        } else {
            fallback = true;
        }
        tracing::warn!(
            backend = backend.id(),
            "candidate scoring unavailable, parsing text output"
        );
    }
    let request = CompletionRequest {
        temperature: decoding.temperature,
        ..CompletionRequest::new(&decoding.model_id, prompt, decoding.classify_max_tokens)
    };
    let response = backend.complete(&request)?;
    let mut prediction = extract_label(&response.text, labels);
    if fallback {
        prediction.flags.push(PredictionFlag::ScoringFallback);
    }
    Ok(prediction)
}

/// Classifies `content` with the step-4 prompt.
pub fn predict(
    registry: &TemplateRegistry,
    content: &str,
    labels: &LabelSet,
    backend: &dyn Backend,
    strategy: Strategy,
    decoding: &Decoding,
) -> Result<Prediction> {
    let step = classification_step(registry, content, labels, PromptStyle::QlfrStep4)?;
    Ok(predict_step(backend, &step, labels, strategy, decoding)?)
}
