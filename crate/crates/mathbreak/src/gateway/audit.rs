//! Append-only audit log of issued requests. Every attempt is logged before
//! dispatch and again with its outcome, so the engine's query accounting can
//! be reconciled against what actually went out.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AuditRecord {
    /// Unix seconds.
    pub timestamp: f64,
    pub endpoint: String,
    pub key_hash: String,
    pub attempt: u32,
    /// "issued" before dispatch; then "ok", "transient-error",
    /// "protocol-error", or "exhausted".
    pub outcome: String,
}

pub struct AuditLog {
    writer: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl AuditLog {
    pub fn to_file(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
        })
    }

    /// A no-op log for callers that don't need auditing.
    pub fn disabled() -> Self {
        Self {
            writer: None,
            path: None,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, endpoint: &str, key_hash: &str, attempt: u32, outcome: &str) {
        let Some(writer) = &self.writer else {
            return;
        };
        let record = AuditRecord {
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            endpoint: endpoint.to_string(),
            key_hash: key_hash.to_string(),
            attempt,
            outcome: outcome.to_string(),
        };
        let mut w = writer.lock().unwrap();
        // Flushed line-by-line so the log is valid even if we are killed.
        if serde_json::to_writer(&mut *w, &record).is_ok() {
            let _ = w.write_all(b"\n");
            let _ = w.flush();
        }
    }
}

/// Read an audit log back; skips blank lines.
pub fn read_audit_log(path: &Path) -> Result<Vec<AuditRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

/// Number of dispatched requests (counting each distinct exchange once, not
/// per retry attempt) for one endpoint.
pub fn issued_exchanges(records: &[AuditRecord], endpoint: &str) -> usize {
    records
        .iter()
        .filter(|r| r.endpoint == endpoint && r.outcome == "issued" && r.attempt == 1)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::to_file(&path).unwrap();
        log.append("m", "hash1", 1, "issued");
        log.append("m", "hash1", 1, "ok");
        log.append("other", "hash2", 1, "issued");
        let records = read_audit_log(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(issued_exchanges(&records, "m"), 1);
        assert_eq!(issued_exchanges(&records, "other"), 1);
    }

    #[test]
    fn disabled_log_is_silent() {
        let log = AuditLog::disabled();
        log.append("m", "h", 1, "issued");
        assert!(log.path().is_none());
    }
}
