//! Scripted mock backend.
//!
//! Rules are read from JSONL, one `{pattern, response}` object per line. The
//! first rule whose pattern matches the prompt wins; a prompt matching no rule
//! is an error. `pattern` is a substring, or an array of substrings that must
//! all occur. A rule may carry `scores` (label → score) instead of, or in
//! addition to, `response`; those rules answer candidate scoring.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CandidateScore, CompletionRequest, CompletionResponse, Usage};
use crate::corpus::LabelSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pattern {
    One(String),
    All(Vec<String>),
}

impl Pattern {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Pattern::One(p) => prompt.contains(p.as_str()),
            Pattern::All(ps) => ps.iter().all(|p| prompt.contains(p.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub pattern: Pattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    /// Answer with a provider refusal instead of text.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refuse: bool,
}

impl MockRule {
    pub fn text(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        MockRule {
            pattern: Pattern::One(pattern.into()),
            response: Some(response.into()),
            scores: None,
            refuse: false,
        }
    }

    pub fn all<I, S>(patterns: I, response: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockRule {
            pattern: Pattern::All(patterns.into_iter().map(Into::into).collect()),
            response: Some(response.into()),
            scores: None,
            refuse: false,
        }
    }

    pub fn scores<'a>(
        pattern: impl Into<String>,
        scores: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Self {
        MockRule {
            pattern: Pattern::One(pattern.into()),
            response: None,
            scores: Some(
                scores
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v))
                    .collect(),
            ),
            refuse: false,
        }
    }

    pub fn refusal(pattern: impl Into<String>) -> Self {
        MockRule {
            pattern: Pattern::One(pattern.into()),
            response: None,
            scores: None,
            refuse: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    rules: Vec<MockRule>,
}

fn preview(prompt: &str) -> String {
    const MAX: usize = 120;
    if prompt.chars().count() <= MAX {
        prompt.to_string()
    } else {
        let head: String = prompt.chars().take(MAX).collect();
        format!("{head}...")
    }
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockBackend {
            id: "mock".into(),
            rules,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    /// Loads a JSONL rule file. Blank lines are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rules = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: MockRule = serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            if rule.response.is_none() && rule.scores.is_none() && !rule.refuse {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "rule needs a response, scores or refuse".into(),
                });
            }
            rules.push(rule);
        }
        Ok(MockBackend::new(rules))
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let rule = self
            .rules
            .iter()
            .filter(|r| r.response.is_some() || r.refuse)
            .find(|r| r.pattern.matches(&request.prompt))
            .ok_or_else(|| BackendError::NoRuleMatch(preview(&request.prompt)))?;
        if rule.refuse {
            return Err(BackendError::Refusal(preview(&request.prompt)));
        }
        let text = rule.response.clone().unwrap_or_default();
        Ok(CompletionResponse {
            usage: Usage {
                prompt_tokens: request.prompt.split_whitespace().count() as u64,
                completion_tokens: text.split_whitespace().count() as u64,
            },
            ..CompletionResponse::stop(text)
        })
    }

    fn supports_scoring(&self) -> bool {
        self.rules.iter().any(|r| r.scores.is_some())
    }

    fn score_candidates(
        &self,
        context: &str,
        candidates: &LabelSet,
    ) -> Result<Vec<CandidateScore>, BackendError> {
        if !self.supports_scoring() {
            return Err(BackendError::ScoringUnsupported);
        }
        let table = self
            .rules
            .iter()
            .filter_map(|r| r.scores.as_ref().map(|s| (r, s)))
            .find(|(r, _)| r.pattern.matches(context))
            .map(|(_, s)| s)
            .ok_or_else(|| BackendError::NoRuleMatch(preview(context)))?;
        candidates
            .iter()
            .map(|label| {
                let score = table
                    .iter()
                    .find(|(name, _)| candidates.resolve(name) == Some(label))
                    .map(|(_, s)| *s)
                    .ok_or_else(|| {
                        BackendError::Provider(format!("mock scores lack candidate {label:?}"))
                    })?;
                Ok(CandidateScore {
                    label: label.clone(),
                    score,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let mock = MockBackend::new(vec![
            MockRule::all(
                ["identify key concepts", "Del Potro"],
                "Del Potro; French Open",
            ),
            MockRule::text("identify key concepts", "something"),
        ]);
        let out = mock
            .complete(&CompletionRequest::new(
                "m",
                "Given the short text 'Del Potro says make French Open'. identify key concepts.",
                16,
            ))
            .unwrap();
        assert_eq!(out.text, "Del Potro; French Open");
        let other = mock
            .complete(&CompletionRequest::new(
                "m",
                "Given x. identify key concepts.",
                16,
            ))
            .unwrap();
        assert_eq!(other.text, "something");
        assert!(matches!(
            mock.complete(&CompletionRequest::new("m", "no rule here", 16)),
            Err(BackendError::NoRuleMatch(_))
        ));
    }

    #[test]
    fn parses_rule_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"pattern\": \"hello\", \"response\": \"hi\"}\n",
                "\n",
                "{\"pattern\": [\"a\", \"b\"], \"response\": \"ab\"}\n",
                "{\"pattern\": \"ctx\", \"scores\": {\"x\": 1.0}}\n",
            ),
        )
        .unwrap();
        let mock = MockBackend::from_file(&path).unwrap();
        assert_eq!(mock.rules().len(), 3);
        assert!(mock.supports_scoring());

        fs::write(&path, "{\"pattern\": \"hello\"}\n").unwrap();
        assert!(matches!(
            MockBackend::from_file(&path),
            Err(Error::Malformed { line: 1, .. })
        ));
        fs::write(&path, "{\"pattern\": \"hello\", \"reply\": \"x\"}\n").unwrap();
        assert!(MockBackend::from_file(&path).is_err());
    }

    #[test]
    fn scoring_follows_candidate_order() {
        let labels = LabelSet::new("d", ["b", "a"]).unwrap();
        let mock = MockBackend::new(vec![MockRule::scores("q", [("a", 0.2), ("B", 0.7)])]);
        let scores = mock.score_candidates("q?", &labels).unwrap();
        assert_eq!(scores[0].label.as_str(), "b");
        assert_eq!(scores[0].score, 0.7);
        assert_eq!(scores[1].score, 0.2);
        let missing = LabelSet::new("d", ["a", "c"]).unwrap();
        assert!(mock.score_candidates("q", &missing).is_err());
        assert!(!MockBackend::new(vec![]).supports_scoring());
    }

    #[test]
    fn refusal_is_distinct() {
        let mock = MockBackend::new(vec![MockRule::refusal("bad")]);
        assert!(matches!(
            mock.complete(&CompletionRequest::new("m", "bad prompt", 4)),
            Err(BackendError::Refusal(_))
        ));
    }
}
