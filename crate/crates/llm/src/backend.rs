//! Backend trait and the deterministic backends used for tests, fixtures and
//! dry runs.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{LlmError, Result};
use crate::request::{BackendReply, ChatRequest};

/// Something that turns a chat request into assistant text.
pub trait ChatBackend: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> &str;

    fn send(&self, req: &ChatRequest) -> Result<BackendReply>;
}

/// Replays a fixed queue of replies in order.
pub struct ScriptedBackend {
    id: String,
    queue: Mutex<VecDeque<String>>,
    served: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: "scripted".to_string(),
            queue: Mutex::new(replies.into_iter().map(Into::into).collect()),
            served: Mutex::new(0),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, _req: &ChatRequest) -> Result<BackendReply> {
        let mut queue = self.queue.lock().unwrap();
        let mut served = self.served.lock().unwrap();
        match queue.pop_front() {
            Some(text) => {
                *served += 1;
                Ok(BackendReply::text(text))
            }
            None => Err(LlmError::ScriptExhausted { served: *served }),
        }
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String> + Send + Sync;

/// Backend driven by a closure over the request.
pub struct FnBackend {
    id: String,
    responder: Box<Responder>,
}

impl FnBackend {
    pub fn new<F>(id: impl Into<String>, responder: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            responder: Box::new(responder),
        }
    }
}

impl ChatBackend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, req: &ChatRequest) -> Result<BackendReply> {
        (self.responder)(req).map(BackendReply::text)
    }
}

/// One entry of a rule script.
///
/// A rule fires when the prompt contains every string in `contains`. Its
/// `replies` are served in order; the last one repeats once the list is used
/// up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: Vec<String>,
    pub replies: Vec<String>,
}

/// On-disk rule script: first matching rule wins, `default` covers the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleScript {
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
}

/// Prompt-matching scripted backend loaded from a JSON rule script.
pub struct RuleBackend {
    id: String,
    script: RuleScript,
    cursors: Mutex<Vec<usize>>,
}

impl RuleBackend {
    pub fn new(script: RuleScript) -> Self {
        let cursors = vec![0; script.rules.len()];
        Self {
            id: "rules".to_string(),
            script,
            cursors: Mutex::new(cursors),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidRequest(format!("cannot read script {}: {e}", path.display())))?;
        let script: RuleScript = serde_json::from_str(&text)
            .map_err(|e| LlmError::InvalidRequest(format!("invalid script {}: {e}", path.display())))?;
        Ok(Self::new(script))
    }
}

impl ChatBackend for RuleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, req: &ChatRequest) -> Result<BackendReply> {
        let prompt = req.prompt();
        let hit = self
            .script
            .rules
            .iter()
            .position(|rule| rule.contains.iter().all(|needle| prompt.contains(needle.as_str())));
        match hit {
            Some(idx) => {
                let rule = &self.script.rules[idx];
                if rule.replies.is_empty() {
                    return Err(LlmError::ScriptExhausted { served: 0 });
                }
                let mut cursors = self.cursors.lock().unwrap();
                let at = cursors[idx].min(rule.replies.len() - 1);
                cursors[idx] += 1;
                Ok(BackendReply::text(rule.replies[at].clone()))
            }
            None => self
                .script
                .default
                .clone()
                .map(BackendReply::text)
                .ok_or(LlmError::ScriptExhausted { served: 0 }),
        }
    }
}

/// Records every request and answers with an empty completion.
#[derive(Default)]
pub struct DryRunBackend {
    seen: Mutex<Vec<ChatRequest>>,
}

impl DryRunBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatBackend for DryRunBackend {
    fn id(&self) -> &str {
        "dry-run"
    }

    fn send(&self, req: &ChatRequest) -> Result<BackendReply> {
        self.seen.lock().unwrap().push(req.clone());
        Ok(BackendReply::text(""))
    }
}
