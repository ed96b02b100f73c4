//! The gateway every pipeline stage talks to.
//!
//! Order of operations for one call: validate, consult the cache (greedy
//! requests only), take a token from the bucket, call the backend, retry
//! retryable failures with backoff, record usage, fill the cache.

use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::cache::{CacheKey, ResponseCache};
use crate::error::{LlmError, Result};
use crate::request::{ChatRequest, Completion};
use crate::retry::{RetryPolicy, TokenBucket};

/// Anything that can answer a chat request. Implemented by [`Gateway`]; the
/// pipeline wraps it to meter per-task usage.
pub trait ChatModel: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Completion>;
}

/// Per-run call accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub remote_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageLedger {
    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ledger serializes");
        std::fs::write(path, text + "\n")
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    bucket: TokenBucket,
    usage: Mutex<UsageLedger>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            bucket: TokenBucket::new(4),
            usage: Mutex::new(UsageLedger::default()),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, permits: usize) -> Self {
        self.bucket = TokenBucket::new(permits);
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn usage(&self) -> UsageLedger {
        self.usage.lock().unwrap().clone()
    }

    fn call_backend(&self, req: &ChatRequest) -> Result<Completion> {
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let outcome = {
                let _token = self.bucket.acquire();
                self.backend.send(req)
            };
            match outcome {
                Ok(reply) => {
                    let mut usage = self.usage.lock().unwrap();
                    usage.remote_calls += 1;
                    usage.prompt_tokens += reply.usage.prompt_tokens.unwrap_or(0);
                    usage.completion_tokens += reply.usage.completion_tokens.unwrap_or(0);
                    return Ok(Completion {
                        text: reply.text,
                        usage: reply.usage,
                        cached: false,
                    });
                }
                Err(err) if err.is_retryable() && attempt < max_attempts => {
                    let hint = match &err {
                        LlmError::RateLimited { retry_after } => *retry_after,
                        _ => None,
                    };
                    let delay = self.retry.delay_after(attempt, hint);
                    tracing::warn!(attempt, ?delay, "retrying chat call: {err}");
                    self.usage.lock().unwrap().retries += 1;
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(err) => {
                    self.usage.lock().unwrap().failures += 1;
                    return Err(err);
                }
            }
        }
    }
}

impl ChatModel for Gateway {
    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        req.validate()?;
        let key = match (&self.cache, req.is_greedy()) {
            (Some(_), true) => Some(CacheKey::for_request(self.backend.id(), req)),
            _ => None,
        };
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(record) = cache.get(key) {
                self.usage.lock().unwrap().cache_hits += 1;
                return Ok(Completion {
                    text: record.completion,
                    usage: record.usage,
                    cached: true,
                });
            }
        }
        let completion = self.call_backend(req)?;
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Err(e) = cache.put(key, &completion.text, completion.usage) {
                tracing::warn!("cache write failed: {e}");
            }
        }
        Ok(completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FnBackend, ScriptedBackend};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn greedy(prompt: &str) -> ChatRequest {
        ChatRequest::user_prompt("m", prompt, 0.0)
    }

    #[test]
    fn scripted_queue_in_order() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(["a", "b"])));
        assert_eq!(gw.complete(&greedy("1")).unwrap().text, "a");
        assert_eq!(gw.complete(&greedy("2")).unwrap().text, "b");
        assert!(matches!(
            gw.complete(&greedy("3")),
            Err(LlmError::ScriptExhausted { .. })
        ));
    }

    #[test]
    fn greedy_repeat_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(["only once"])))
            .with_cache(ResponseCache::open(dir.path()).unwrap());
        let first = gw.complete(&greedy("same")).unwrap();
        let second = gw.complete(&greedy("same")).unwrap();
        assert_eq!(first.text, second.text);
        assert!(!first.cached);
        assert!(second.cached);
        let usage = gw.usage();
        assert_eq!(usage.remote_calls, 1);
        assert_eq!(usage.cache_hits, 1);
    }

    #[test]
    fn sampled_requests_bypass_cache() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(["x", "y"])))
            .with_cache(ResponseCache::open(dir.path()).unwrap());
        let req = ChatRequest::user_prompt("m", "p", 1.0);
        assert_eq!(gw.complete(&req).unwrap().text, "x");
        assert_eq!(gw.complete(&req).unwrap().text, "y");
        assert_eq!(gw.usage().cache_hits, 0);
    }

    #[test]
    fn retries_transport_errors_then_succeeds() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let backend = FnBackend::new("flaky", move |_| {
            if counter.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(LlmError::Transport("reset".into()))
            } else {
                Ok("ok".into())
            }
        });
        let gw = Gateway::new(Arc::new(backend)).with_retry(RetryPolicy::no_delay(3));
        assert_eq!(gw.complete(&greedy("p")).unwrap().text, "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(gw.usage().retries, 2);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let backend = FnBackend::new("down", move |_| {
            counter.fetch_add(1, Ordering::SeqCst);
            Err(LlmError::RateLimited { retry_after: None })
        });
        let gw = Gateway::new(Arc::new(backend)).with_retry(RetryPolicy::no_delay(3));
        assert!(matches!(gw.complete(&greedy("p")), Err(LlmError::RateLimited { .. })));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(gw.usage().failures, 1);
    }

    #[test]
    fn malformed_is_not_retried() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let backend = FnBackend::new("bad", move |_| {
            counter.fetch_add(1, Ordering::SeqCst);
            Err(LlmError::Malformed("{".into()))
        });
        let gw = Gateway::new(Arc::new(backend)).with_retry(RetryPolicy::no_delay(3));
        assert!(gw.complete(&greedy("p")).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn invalid_request_never_reaches_backend() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(["a"])));
        let req = ChatRequest::user_prompt("m", "p", -1.0);
        assert!(matches!(gw.complete(&req), Err(LlmError::InvalidRequest(_))));
        assert_eq!(gw.usage().remote_calls, 0);
    }
}
