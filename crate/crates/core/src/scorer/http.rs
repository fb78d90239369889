//! OpenAI-compatible completions backend.
//!
//! Scores by echoing the filled prompt with `logprobs` and summing the
//! log-probabilities of the tokens that overlap the scored character span.
//! Tokens that merge a leading space into the variant overlap the span and
//! are included.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::{Architecture, BackendError, ScoreRequest, ScoringBackend, ScoringMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Base URL up to and including `/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// `max_tokens` sent with echo requests; 0 where the server allows it,
    /// otherwise 1 (the generated token is discarded).
    #[serde(default)]
    pub echo_max_tokens: u32,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
}

fn default_timeout() -> u64 {
    60
}
fn default_attempts() -> u32 {
    5
}
fn default_backoff() -> u64 {
    500
}

impl HttpBackendConfig {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key_env: impl Into<String>,
    ) -> Self {
        HttpBackendConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: api_key_env.into(),
            timeout_secs: default_timeout(),
            echo_max_tokens: 0,
            max_attempts: default_attempts(),
            initial_backoff_ms: default_backoff(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HttpSetupError {
    #[error("environment variable `{0}` with the API key is not set")]
    MissingCredential(String),
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    echo: bool,
    logprobs: u32,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
pub struct CompletionResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
pub struct Choice {
    pub logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
pub struct Logprobs {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<f64>>,
    pub text_offset: Vec<usize>,
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: String,
    client: reqwest::Client,
    id: String,
    capabilities: [ScoringMode; 2],
}

impl HttpBackend {
    /// Build the backend, reading the key from the configured environment
    /// variable.
    pub fn from_env(config: HttpBackendConfig) -> Result<Self, HttpSetupError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| HttpSetupError::MissingCredential(config.api_key_env.clone()))?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: HttpBackendConfig, api_key: String) -> Result<Self, HttpSetupError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| HttpSetupError::Client(e.to_string()))?;
        let id = format!(
            "http:{}@{}",
            config.model,
            config.base_url.trim_end_matches('/')
        );
        Ok(HttpBackend {
            config,
            api_key,
            client,
            id,
            capabilities: [ScoringMode::Continuation, ScoringMode::FullSequence],
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    async fn echo(&self, prompt: &str) -> Result<Logprobs, BackendError> {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt,
            max_tokens: self.config.echo_max_tokens,
            echo: true,
            logprobs: 1,
            temperature: 0.0,
        };
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self
                    .config
                    .initial_backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                tokio::time::sleep(Duration::from_millis(delay)).await;
            }
            let sent = self
                .client
                .post(self.endpoint())
                .bearer_auth(&self.api_key)
                .json(&body)
                .send()
                .await;
            let response = match sent {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    tracing::debug!(attempt, error = %last, "transport error");
                    continue;
                }
            };
            let status = response.status();
            if status.as_u16() == 429 || status.is_server_error() {
                last = format!("status {status}");
                tracing::debug!(attempt, %status, "retryable status");
                continue;
            }
            if !status.is_success() {
                let text = response.text().await.unwrap_or_default();
                return Err(BackendError::Status {
                    status: status.as_u16(),
                    body: text,
                });
            }
            let parsed: CompletionResponse = match response.json().await {
                Ok(p) => p,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            return parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.logprobs)
                .ok_or_else(|| BackendError::Malformed("no logprobs in first choice".to_string()));
        }
        Err(BackendError::Transport {
            attempts,
            message: last,
        })
    }
}

/// Sum the log-probabilities of echoed tokens overlapping `[start, end)`
/// (character offsets). Tokens at or beyond `prompt_chars` were generated
/// and are ignored.
pub fn span_log_prob(
    lp: &Logprobs,
    start: usize,
    end: usize,
    prompt_chars: usize,
) -> Result<f64, BackendError> {
    let n = lp.tokens.len();
    if lp.token_logprobs.len() != n || lp.text_offset.len() != n {
        return Err(BackendError::Malformed(
            "logprob arrays differ in length".to_string(),
        ));
    }
    let mut total = 0.0;
    let mut covered = false;
    for j in 0..n {
        let tok_start = lp.text_offset[j];
        if tok_start >= prompt_chars {
            break;
        }
        let tok_end = if j + 1 < n {
            lp.text_offset[j + 1]
        } else {
            tok_start + lp.tokens[j].chars().count()
        }
        .min(prompt_chars);
        let overlaps = tok_start < end && tok_end > start;
        if !overlaps {
            continue;
        }
        match lp.token_logprobs[j] {
            Some(v) if v.is_finite() => {
                total += v;
                covered = true;
            }
            Some(_) => {
                return Err(BackendError::Malformed(
                    "non-finite token logprob".to_string(),
                ))
            }
            // The first token of an echo carries no probability; it can only
            // be skipped when scoring the whole sequence.
            None if start == 0 && j == 0 => {}
            None => return Err(BackendError::TokenBoundary { start, end }),
        }
    }
    if !covered {
        return Err(BackendError::TokenBoundary { start, end });
    }
    Ok(total)
}

#[async_trait]
impl ScoringBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn architecture(&self) -> Architecture {
        Architecture::Autoregressive
    }

    fn capabilities(&self) -> &[ScoringMode] {
        &self.capabilities
    }

    async fn log_prob(&self, request: &ScoreRequest<'_>) -> Result<f64, BackendError> {
        match request.mode {
            ScoringMode::Continuation => {
                let prompt = format!("{}{}", request.prefix, request.variant);
                let start = request.prefix.chars().count();
                let end = start + request.variant.chars().count();
                let lp = self.echo(&prompt).await?;
                span_log_prob(&lp, start, end, end)
            }
            ScoringMode::FullSequence => {
                let prompt = request.filled();
                let len = prompt.chars().count();
                let lp = self.echo(&prompt).await?;
                span_log_prob(&lp, 0, len, len)
            }
            mode => Err(BackendError::Unsupported(mode)),
        }
    }
}
