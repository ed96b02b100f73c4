use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Bounded exponential backoff for retryable backend errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    /// Delay before attempt `attempt + 1`, where `attempt` counts from 1.
    /// A server-provided `retry_after` overrides the computed value but is
    /// still capped.
    pub fn delay_after(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let cap = Duration::from_millis(self.max_delay_ms);
        if let Some(hint) = retry_after {
            return hint.min(cap);
        }
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor)).min(cap)
    }
}

/// Token bucket bounding the number of in-flight backend calls. A token is
/// taken before each call and returned when the guard drops.
#[derive(Debug)]
pub struct TokenBucket {
    available: Mutex<usize>,
    returned: Condvar,
    capacity: usize,
}

impl TokenBucket {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            available: Mutex::new(capacity),
            returned: Condvar::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> TokenGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.returned.wait(available).unwrap();
        }
        *available -= 1;
        TokenGuard { bucket: self }
    }

    pub fn available(&self) -> usize {
        *self.available.lock().unwrap()
    }
}

pub struct TokenGuard<'a> {
    bucket: &'a TokenBucket,
}

impl Drop for TokenGuard<'_> {
    fn drop(&mut self) {
        *self.bucket.available.lock().unwrap() += 1;
        self.bucket.returned.notify_one();
    }
}
