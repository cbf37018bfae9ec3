//! Completion backends.
//!
//! A [`Backend`] turns a fully rendered prompt into text and may optionally
//! score a fixed set of candidate labels. [`CachedBackend`] layers the
//! content-addressed [`Cache`], bounded retries and a concurrency limit on top
//! of any backend; chains and the experiment runner only see the trait.

mod cache;
mod http;
mod mock;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, LabelSet};

pub use cache::{Cache, CacheEntry, CacheStats};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockRule, Pattern};

/// Reasoning steps get 256 tokens; classification 16.
pub const REASONING_MAX_TOKENS: u32 = 256;
pub const CLASSIFY_MAX_TOKENS: u32 = 16;

/// Decoding parameters shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub model_id: String,
    pub temperature: f64,
    pub reasoning_max_tokens: u32,
    pub classify_max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            model_id: "default".into(),
            temperature: 0.0,
            reasoning_max_tokens: REASONING_MAX_TOKENS,
            classify_max_tokens: CLASSIFY_MAX_TOKENS,
        }
    }
}

impl Decoding {
    pub fn for_model(model_id: impl Into<String>) -> Self {
        Decoding {
            model_id: model_id.into(),
            ..Default::default()
        }
    }

    pub fn reasoning_request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            temperature: self.temperature,
            ..CompletionRequest::new(&self.model_id, prompt, self.reasoning_max_tokens)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    /// Greedy (temperature 0) request.
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, max_tokens: u32) -> Self {
        CompletionRequest {
            model_id: model_id.into(),
            prompt: prompt.into(),
            max_tokens,
            temperature: 0.0,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be a finite non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provider_meta: BTreeMap<String, serde_json::Value>,
}

impl CompletionResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        CompletionResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
            provider_meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, rate limits, 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("provider refused the request: {0}")]
    Refusal(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("backend does not support candidate scoring")]
    ScoringUnsupported,
    #[error("mock backend has no rule matching the prompt: {0}")]
    NoRuleMatch(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

pub trait Backend: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    fn supports_scoring(&self) -> bool {
        false
    }

    /// One finite score per candidate, in candidate order.
    fn score_candidates(
        &self,
        _context: &str,
        _candidates: &LabelSet,
    ) -> Result<Vec<CandidateScore>, BackendError> {
        Err(BackendError::ScoringUnsupported)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
    fn supports_scoring(&self) -> bool {
        (**self).supports_scoring()
    }
    fn score_candidates(
        &self,
        context: &str,
        candidates: &LabelSet,
    ) -> Result<Vec<CandidateScore>, BackendError> {
        (**self).score_candidates(context, candidates)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
    fn supports_scoring(&self) -> bool {
        (**self).supports_scoring()
    }
    fn score_candidates(
        &self,
        context: &str,
        candidates: &LabelSet,
    ) -> Result<Vec<CandidateScore>, BackendError> {
        (**self).score_candidates(context, candidates)
    }
}

/// Checks the scoring contract: one finite score per candidate, in order.
pub fn check_scores(scores: &[CandidateScore], candidates: &LabelSet) -> Result<(), BackendError> {
    if scores.len() != candidates.len() {
        return Err(BackendError::Provider(format!(
            "expected {} candidate scores, got {}",
            candidates.len(),
            scores.len()
        )));
    }
    for (score, label) in scores.iter().zip(candidates) {
        if &score.label != label {
            return Err(BackendError::Provider(format!(
                "score for {:?} out of order, expected {:?}",
                score.label.as_str(),
                label.as_str()
            )));
        }
        if !score.score.is_finite() {
            return Err(BackendError::Provider(format!(
                "non-finite score for {:?}",
                label.as_str()
            )));
        }
    }
    Ok(())
}

/// Bounded exponential backoff for [`BackendError::Transient`] failures.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Default::default()
        }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    let wait = self.delay(attempt);
                    tracing::warn!(attempt, ?wait, error = %e, "retrying backend call");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Cache lookup, then a retried call on miss, then a store.
pub fn complete(
    backend: &dyn Backend,
    cache: &Cache,
    retry: &RetryPolicy,
    request: &CompletionRequest,
) -> Result<CompletionResponse, BackendError> {
    request.validate()?;
    if let Some(hit) = cache.get_completion(backend.id(), request)? {
        return Ok(hit);
    }
    let response = retry.run(|| backend.complete(request))?;
    cache.put_completion(backend.id(), request, &response)?;
    Ok(response)
}

/// Wraps a backend with the response cache, retries and a concurrency limit.
pub struct CachedBackend<B> {
    inner: B,
    cache: Cache,
    retry: RetryPolicy,
    limit: Semaphore,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: Cache) -> Self {
        CachedBackend {
            inner,
            cache,
            retry: RetryPolicy::default(),
            limit: Semaphore::new(8),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.limit = Semaphore::new(limit);
        self
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        if let Some(hit) = self.cache.get_completion(self.inner.id(), request)? {
            return Ok(hit);
        }
        let response = {
            let _permit = self.limit.acquire();
            self.retry.run(|| self.inner.complete(request))?
        };
        self.cache
            .put_completion(self.inner.id(), request, &response)?;
        Ok(response)
    }

    fn supports_scoring(&self) -> bool {
        self.inner.supports_scoring()
    }

    fn score_candidates(
        &self,
        context: &str,
        candidates: &LabelSet,
    ) -> Result<Vec<CandidateScore>, BackendError> {
        if let Some(hit) = self
            .cache
            .get_scores(self.inner.id(), context, candidates)?
        {
            return Ok(hit);
        }
        let scores = {
            let _permit = self.limit.acquire();
            self.retry
                .run(|| self.inner.score_candidates(context, candidates))?
        };
        check_scores(&scores, candidates)?;
        self.cache
            .put_scores(self.inner.id(), context, candidates, &scores)?;
        Ok(scores)
    }
}

/// Counts (and records the prompts of) every call reaching the wrapped backend.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    completions: AtomicUsize,
    scorings: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            completions: AtomicUsize::new(0),
            scorings: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn completions(&self) -> usize {
        self.completions.load(Ordering::SeqCst)
    }

    pub fn scorings(&self) -> usize {
        self.scorings.load(Ordering::SeqCst)
    }

    /// Completions plus scoring calls.
    pub fn calls(&self) -> usize {
        self.completions() + self.scorings()
    }

    /// Prompts and scoring contexts in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn reset(&self) {
        self.completions.store(0, Ordering::SeqCst);
        self.scorings.store(0, Ordering::SeqCst);
        self.prompts.lock().unwrap().clear();
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.completions.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.inner.complete(request)
    }

    fn supports_scoring(&self) -> bool {
        self.inner.supports_scoring()
    }

    fn score_candidates(
        &self,
        context: &str,
        candidates: &LabelSet,
    ) -> Result<Vec<CandidateScore>, BackendError> {
        self.scorings.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(context.to_string());
        self.inner.score_candidates(context, candidates)
    }
}
