//! Chat-completions-compatible HTTP backend.
//!
//! Speaks the common `POST {base_url}/chat/completions` protocol with a bearer
//! credential read from an environment variable, so hosted APIs and local
//! open-weights servers work through the same code path.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::error::{LlmError, Result};
use crate::request::{BackendReply, ChatRequest, Message, TokenUsage};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const BASE_URL_ENV: &str = "VINSTA_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    /// Environment variable holding the bearer token; `None` sends no
    /// credential (typical for local servers).
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string()),
            api_key_env: Some(DEFAULT_API_KEY_ENV.to_string()),
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    id: String,
    endpoint: String,
    api_key_env: Option<String>,
    client: Client,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let base = config.base_url.trim_end_matches('/');
        Ok(Self {
            id: format!("http:{base}"),
            endpoint: format!("{base}/chat/completions"),
            api_key_env: config.api_key_env.clone(),
            client,
        })
    }

    fn credential(&self) -> Result<Option<String>> {
        let Some(var) = &self.api_key_env else {
            return Ok(None);
        };
        match std::env::var(var) {
            Ok(key) if !key.trim().is_empty() => Ok(Some(key)),
            _ => Err(LlmError::Auth(format!("environment variable {var} is unset or empty"))),
        }
    }
}

fn parse_retry_after(value: &str) -> Option<Duration> {
    value.trim().parse::<f64>().ok().filter(|s| *s >= 0.0).map(Duration::from_secs_f64)
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, req: &ChatRequest) -> Result<BackendReply> {
        let body = WireRequest {
            model: &req.model_name,
            messages: &req.messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = self.credential()? {
            call = call.bearer_auth(key);
        }
        tracing::debug!(endpoint = %self.endpoint, model = %req.model_name, "chat request");
        let response = call.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            let retry_after = response
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(parse_retry_after);
            return Err(LlmError::RateLimited { retry_after });
        }
        let text = response.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth(format!("HTTP {}: {text}", status.as_u16()))),
            code => {
                return Err(LlmError::Server {
                    status: code,
                    body: text,
                })
            }
        }
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::Malformed(format!("{e}: {text}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("response has no message content".into()))?;
        let usage = parsed
            .usage
            .map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(BackendReply { text: content, usage })
    }
}
