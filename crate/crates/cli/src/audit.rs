//! Append-only audit log in JSON lines.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::lock::FileLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditAction {
    Ingest,
    Index,
    Query,
    Answer,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    /// Position in the log, starting at 1. Filled in by [`append_audit`].
    pub seq: u64,
    pub timestamp: String,
    pub action: AuditAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_hash: Option<String>,
    #[serde(default)]
    pub snippet_chunk_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_hash: Option<String>,
    pub status: String,
    /// Raw question text, only present when redaction is off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
}

impl AuditEvent {
    pub fn new(action: AuditAction, status: impl Into<String>) -> Self {
        Self {
            seq: 0,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            action,
            query_hash: None,
            snippet_chunk_ids: Vec::new(),
            answer_hash: None,
            status: status.into(),
            query_text: None,
            answer_text: None,
        }
    }
}

/// Last non-empty line of a file, read backwards from the end.
fn last_line(file: &mut File) -> Result<Option<String>> {
    let len = file.metadata()?.len();
    let mut tail: Vec<u8> = Vec::new();
    let mut pos = len;
    const BLOCK: u64 = 4096;
    while pos > 0 {
        let start = pos.saturating_sub(BLOCK);
        let mut buf = vec![0u8; (pos - start) as usize];
        file.seek(SeekFrom::Start(start))?;
        file.read_exact(&mut buf)?;
        buf.extend_from_slice(&tail);
        tail = buf;
        pos = start;
        let trimmed = tail.trim_ascii_end();
        if trimmed.contains(&b'\n') {
            break;
        }
    }
    let text = String::from_utf8(tail).context("audit log is not UTF-8")?;
    Ok(text.lines().rev().find(|l| !l.trim().is_empty()).map(str::to_string))
}

/// Appends `event` with the next sequence number and returns the stored event.
pub fn append_audit(mut event: AuditEvent, log_path: &Path) -> Result<AuditEvent> {
    if let Some(parent) = log_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let _lock = FileLock::acquire(&log_path.with_extension("lock"))?;
    let mut file = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(log_path)
        .with_context(|| format!("opening audit log {}", log_path.display()))?;
    let last_seq = match last_line(&mut file)? {
        Some(line) => {
            serde_json::from_str::<AuditEvent>(&line).context("audit log has a malformed last line")?.seq
        }
        None => 0,
    };
    event.seq = last_seq + 1;
    let mut line = serde_json::to_string(&event)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()?;
    Ok(event)
}

pub fn read_audit(log_path: &Path) -> Result<Vec<AuditEvent>> {
    let text = std::fs::read_to_string(log_path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("malformed audit line"))
        .collect()
}
