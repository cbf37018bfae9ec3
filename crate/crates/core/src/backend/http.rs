//! Chat-completions style HTTP backend (OpenAI-compatible JSON API).

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, CompletionRequest, CompletionResponse, FinishReason, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub id: String,
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
}

pub struct HttpBackend {
    config: HttpConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    /// Reads the token from `api_key_env` when set; a missing variable is an error.
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let token = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::InvalidRequest(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            config,
            token,
            agent,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }
}

fn classify_transport(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::BodyStalled => BackendError::Transient(err.to_string()),
        other => BackendError::Provider(other.to_string()),
    }
}

fn looks_like_refusal(body: &str) -> bool {
    let lower = body.to_lowercase();
    lower.contains("content_filter") || lower.contains("content_policy") || lower.contains("refus")
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let mut body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        let mut call = self.agent.post(&self.endpoint());
        if let Some(token) = &self.token {
            call = call.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = call.send_json(&body).map_err(classify_transport)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(classify_transport)?;
        match status {
            200..=299 => {}
            408 | 409 | 429 | 500..=599 => {
                return Err(BackendError::Transient(format!("HTTP {status}: {text}")))
            }
            _ if looks_like_refusal(&text) => {
                return Err(BackendError::Refusal(format!("HTTP {status}: {text}")))
            }
            _ => return Err(BackendError::Provider(format!("HTTP {status}: {text}"))),
        }

        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Provider(format!("unparseable response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Provider("response has no choices".into()))?;
        if let Some(refusal) = choice.message.refusal.filter(|r| !r.is_empty()) {
            return Err(BackendError::Refusal(refusal));
        }
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("content_filter") => {
                return Err(BackendError::Refusal("finish_reason=content_filter".into()))
            }
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        let content = choice
            .message
            .content
            .ok_or_else(|| BackendError::Provider("choice has no content".into()))?;

        let mut out = CompletionResponse {
            text: content,
            finish_reason,
            usage: parsed
                .usage
                .map(|u| Usage {
                    prompt_tokens: u.prompt_tokens,
                    completion_tokens: u.completion_tokens,
                })
                .unwrap_or_default(),
            provider_meta: Default::default(),
        };
        if let Some(model) = parsed.model {
            out.provider_meta.insert("model".into(), model.into());
        }
        if let Some(id) = parsed.id {
            out.provider_meta.insert("id".into(), id.into());
        }
        Ok(out)
    }
}
