use std::time::Duration;

/// Errors surfaced by chat backends and the gateway.
#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),

    #[error("authentication failed: {0}")]
    Auth(String),

    #[error("rate limited by backend")]
    RateLimited { retry_after: Option<Duration> },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("backend returned HTTP {status}: {body}")]
    Server { status: u16, body: String },

    #[error("malformed backend response: {0}")]
    Malformed(String),

    #[error("script exhausted after {served} replies")]
    ScriptExhausted { served: usize },

    #[error("response cache error: {0}")]
    Cache(String),
}

impl LlmError {
    /// Whether a fresh attempt of the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::RateLimited { .. } | LlmError::Transport(_) => true,
            LlmError::Server { status, .. } => *status == 408 || *status >= 500,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, LlmError>;
