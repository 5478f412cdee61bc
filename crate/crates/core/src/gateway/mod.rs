//! Uniform access to completion-style language models.
//!
//! [`Gateway`] wraps a [`CompletionBackend`] with the things every backend
//! needs: a context-window check, bounded retries with exponential backoff, and
//! a cap on concurrent in-flight calls.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::prompt::Prompt;

mod http;
mod mock;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{MockBackend, MockEntry};

/// Sampling knobs for one completion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Top-p probability mass, in (0, 1].
    pub nucleus_mass: f64,
    pub temperature: f64,
    /// Completion budget in tokens (prompt excluded).
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            nucleus_mass: 0.9,
            temperature: 1.0,
            max_tokens: 511,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.nucleus_mass > 0.0 && self.nucleus_mass <= 1.0) {
            return Err(GatewayError::InvalidConfig(format!(
                "nucleus_mass {} outside (0, 1]",
                self.nucleus_mass
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidConfig(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidConfig("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Raw model output, before marker truncation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u32>,
}

/// Wire request: `{prompt, max_tokens, temperature, top_p, seed?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: &Prompt, config: &SamplingConfig) -> Self {
        Self {
            prompt: prompt.text.clone(),
            max_tokens: config.max_tokens,
            temperature: config.temperature,
            top_p: config.nucleus_mass,
            seed: Some(config.seed),
        }
    }
}

/// How a single backend attempt failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendFailure {
    /// Network trouble, timeouts, 5xx, 429: worth retrying.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// The backend refused the request (4xx-style); retrying will not help.
    #[error("backend rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("backend rejected request ({status}): {message}")]
    BackendRejected { status: u16, message: String },
    #[error("prompt of {tokens} tokens exceeds the {window}-token context window")]
    ContextOverflow { tokens: usize, window: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid gateway configuration: {0}")]
    InvalidConfig(String),
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Context window in tokens, when the backend advertises one.
    fn context_window(&self) -> Option<usize> {
        None
    }

    /// Token count under the backend's own tokenizer, when available.
    fn count_tokens(&self, _text: &str) -> Option<usize> {
        None
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, first call included.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff
            .mul_f64(self.multiplier.powi(retry.saturating_sub(1) as i32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayConfig {
    pub retry: RetryPolicy,
    /// Window used when the backend does not advertise one.
    pub default_context_window: usize,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            default_context_window: 2048,
            max_in_flight: 8,
        }
    }
}

/// Conservative token estimate: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    config: GatewayConfig,
    permits: Semaphore,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("config", &self.config)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn CompletionBackend>, config: GatewayConfig) -> Self {
        let permits = Semaphore::new(config.max_in_flight.max(1));
        Self {
            backend,
            config,
            permits,
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn context_window(&self) -> usize {
        self.backend
            .context_window()
            .unwrap_or(self.config.default_context_window)
    }

    pub async fn complete(
        &self,
        prompt: &Prompt,
        sampling: &SamplingConfig,
    ) -> Result<Completion, GatewayError> {
        if prompt.text.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        sampling.validate()?;
        let tokens = self
            .backend
            .count_tokens(&prompt.text)
            .unwrap_or_else(|| estimate_tokens(&prompt.text));
        let window = self.context_window();
        if tokens > window {
            return Err(GatewayError::ContextOverflow { tokens, window });
        }

        let request = CompletionRequest::new(prompt, sampling);
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| GatewayError::InvalidConfig("gateway closed".into()))?;

        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.complete(&request).await {
                Ok(completion) => return Ok(completion),
                Err(BackendFailure::Rejected { status, message }) => {
                    return Err(GatewayError::BackendRejected { status, message })
                }
                Err(BackendFailure::Transient(message)) => {
                    if attempt >= max_attempts {
                        return Err(GatewayError::BackendUnavailable {
                            attempts: attempt,
                            message,
                        });
                    }
                    let wait = self.config.retry.backoff(attempt);
                    tracing::warn!(attempt, ?wait, %message, "retrying completion");
                    tokio::time::sleep(wait).await;
                }
            }
        }
    }
}

/// Cuts `text` at the earliest occurrence of any marker.
pub fn truncate_at_marker<'a>(text: &'a str, markers: &[impl AsRef<str>]) -> &'a str {
    let cut = markers
        .iter()
        .filter_map(|m| {
            let m = m.as_ref();
            if m.is_empty() {
                None
            } else {
                text.find(m)
            }
        })
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}
