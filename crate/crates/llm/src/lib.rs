//! Uniform access to chat models.
//!
//! [`Gateway`] fronts any [`ChatBackend`] with a content-addressed response
//! cache, bounded retries and usage accounting. Backends range from the
//! chat-completions HTTP client to fully scripted ones that make a pipeline a
//! pure function of its inputs.

pub mod backend;
pub mod cache;
pub mod error;
pub mod extract;
pub mod gateway;
pub mod http;
pub mod request;
pub mod retry;

pub use backend::{ChatBackend, DryRunBackend, FnBackend, RuleBackend, RuleScript, ScriptRule, ScriptedBackend};
pub use cache::{CacheKey, CacheRecord, ResponseCache};
pub use error::{LlmError, Result};
pub use extract::{extract_json_field, ExtractError};
pub use gateway::{ChatModel, Gateway, UsageLedger};
pub use http::{HttpBackend, HttpConfig};
pub use request::{BackendReply, ChatRequest, Completion, Message, Role, TokenUsage};
pub use retry::{RetryPolicy, TokenBucket};
