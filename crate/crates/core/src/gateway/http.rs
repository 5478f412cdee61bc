//! JSON-over-HTTP backend.
//!
//! POSTs `{prompt, max_tokens, temperature, top_p, seed?}` and expects
//! `{text}` back (an optional `token_count` is accepted).

use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;

use super::{BackendFailure, Completion, CompletionBackend, CompletionRequest};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub context_window: Option<usize>,
}

impl HttpBackendConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            context_window: None,
        }
    }

    /// Reads `LMGW_BACKEND_URL` and `LMGW_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("LMGW_BACKEND_URL").ok()?;
        let mut config = Self::new(url);
        config.api_key = std::env::var("LMGW_API_KEY").ok().filter(|k| !k.is_empty());
        Some(config)
    }
}

#[derive(Debug, Deserialize)]
struct WireCompletion {
    text: String,
    #[serde(default)]
    token_count: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    config: HttpBackendConfig,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendFailure> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendFailure::Rejected {
                status: 0,
                message: format!("cannot build HTTP client: {e}"),
            })?;
        Ok(Self { client, config })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }
}

fn is_retryable(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.url
    }

    fn context_window(&self) -> Option<usize> {
        self.config.context_window
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendFailure> {
        let mut builder = self.client.post(&self.config.url).json(request);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| BackendFailure::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if !response.status().is_success() {
            let message = response.text().await.unwrap_or_default();
            return Err(if is_retryable(status) {
                BackendFailure::Transient(format!("HTTP {status}: {message}"))
            } else {
                BackendFailure::Rejected { status, message }
            });
        }
        let wire: WireCompletion = response
            .json()
            .await
            .map_err(|e| BackendFailure::Transient(format!("malformed response body: {e}")))?;
        Ok(Completion {
            text: wire.text,
            backend_id: self.config.url.clone(),
            token_count: wire.token_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retryable_statuses() {
        assert!(is_retryable(500));
        assert!(is_retryable(503));
        assert!(is_retryable(429));
        assert!(is_retryable(408));
        assert!(!is_retryable(400));
        assert!(!is_retryable(401));
        assert!(!is_retryable(404));
    }

    #[test]
    fn request_wire_shape() {
        let req = CompletionRequest {
            prompt: "p".into(),
            max_tokens: 511,
            temperature: 1.0,
            top_p: 0.9,
            seed: Some(3),
        };
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"prompt":"p","max_tokens":511,"temperature":1.0,"top_p":0.9,"seed":3})
        );
    }
}
