//! Content-addressed response cache: one JSON file per key hash, holding the
//! request and response verbatim. Replay mode serves exclusively from here.

use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// The cache key tuple: endpoint name, full prompt, temperature, seed.
pub fn cache_key(endpoint: &str, prompt: &str, temperature: f64, seed: Option<u64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(endpoint.as_bytes());
    hasher.update([0]);
    hasher.update(prompt.as_bytes());
    hasher.update([0]);
    hasher.update(format!("{temperature:?}").as_bytes());
    hasher.update([0]);
    match seed {
        Some(s) => hasher.update(format!("s{s}").as_bytes()),
        None => hasher.update(b"none"),
    }
    hex_digest(hasher)
}

fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CachedRequest {
    pub endpoint: String,
    pub prompt: String,
    pub temperature: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CachedExchange {
    pub request: CachedRequest,
    pub response_text: String,
    pub completion_tokens: u64,
    pub latency: f64,
    /// Present for mask-fill exchanges instead of `response_text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<(String, f64)>>,
}

/// Disk cache guarded for atomic read-modify-write from many workers.
pub struct DiskCache {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl DiskCache {
    pub fn open(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            lock: Mutex::new(()),
        })
    }

    fn path_for(&self, key_hash: &str) -> PathBuf {
        self.dir.join(format!("{key_hash}.json"))
    }

    pub fn get(&self, key_hash: &str) -> Option<CachedExchange> {
        let _guard = self.lock.lock().unwrap();
        let text = std::fs::read_to_string(self.path_for(key_hash)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key_hash: &str, exchange: &CachedExchange) -> Result<()> {
        let _guard = self.lock.lock().unwrap();
        let tmp = self.dir.join(format!(".{key_hash}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(exchange)?)?;
        std::fs::rename(&tmp, self.path_for(key_hash))?;
        Ok(())
    }
}
