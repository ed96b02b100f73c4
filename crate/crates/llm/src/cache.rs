//! Content-addressed response cache.
//!
//! Each greedy request maps to a SHA-256 digest of its canonical form. The
//! completion lives in `<dir>/<digest[..2]>/<digest>.json`; writes go through
//! a temporary file in the same directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LlmError, Result};
use crate::request::{ChatRequest, TokenUsage};

const RECORD_SEP: u8 = 0x1e;
const UNIT_SEP: u8 = 0x1f;

/// Hex SHA-256 of (backend id, model, temperature, messages).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn for_request(backend_id: &str, req: &ChatRequest) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(backend_id.as_bytes());
        hasher.update([RECORD_SEP]);
        hasher.update(req.model_name.as_bytes());
        hasher.update([RECORD_SEP]);
        hasher.update(req.temperature.to_bits().to_le_bytes());
        for message in &req.messages {
            hasher.update([RECORD_SEP]);
            hasher.update(message.role.as_str().as_bytes());
            hasher.update([UNIT_SEP]);
            hasher.update(message.content.as_bytes());
        }
        CacheKey(hex::encode(hasher.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: String,
    pub completion: String,
    #[serde(default)]
    pub usage: TokenUsage,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| LlmError::Cache(format!("{}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        let digest = key.as_str();
        self.root.join(&digest[..2]).join(format!("{digest}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Option<CacheRecord> {
        let text = fs::read_to_string(self.path_for(key)).ok()?;
        match serde_json::from_str::<CacheRecord>(&text) {
            Ok(record) if record.digest == key.as_str() => Some(record),
            Ok(_) => None,
            Err(e) => {
                tracing::warn!(digest = key.as_str(), "ignoring corrupt cache entry: {e}");
                None
            }
        }
    }

    pub fn put(&self, key: &CacheKey, completion: &str, usage: TokenUsage) -> Result<()> {
        let path = self.path_for(key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| LlmError::Cache(format!("{}: {e}", dir.display())))?;
        let record = CacheRecord {
            digest: key.as_str().to_string(),
            completion: completion.to_string(),
            usage,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let bytes = serde_json::to_vec_pretty(&record).map_err(|e| LlmError::Cache(e.to_string()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| LlmError::Cache(e.to_string()))?;
        tmp.write_all(&bytes).map_err(|e| LlmError::Cache(e.to_string()))?;
        tmp.persist(&path)
            .map_err(|e| LlmError::Cache(format!("{}: {}", path.display(), e.error)))?;
        Ok(())
    }
}
