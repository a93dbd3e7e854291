use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Topic;
use crate::model::{AgentId, Digest};
use crate::workflow::RunEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Chat,
    Tool,
    Error,
    Lifecycle,
}

/// One line of `runs/<run_id>/events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub granularity: Granularity,
    pub sender: AgentId,
    pub topic: Topic,
    pub payload: RunEvent,
    pub state_hash_after: Digest,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("sequence gap: expected {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("line {line} of the event log is not a record: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Append-only event log, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
    file: Option<(PathBuf, File)>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Creates (truncating) the log file and its parent directories.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self {
            records: Vec::new(),
            file: Some((path.to_path_buf(), file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq)
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record whose seq must be exactly one past the tail. The line
    /// is written and flushed before this returns.
    pub fn append(&mut self, record: EventRecord) -> Result<u64, LogError> {
        let expected = self.last_seq() + 1;
        if record.seq != expected {
            return Err(LogError::SeqGap {
                expected,
                got: record.seq,
            });
        }
        if let Some((_, file)) = self.file.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        let seq = record.seq;
        self.records.push(record);
        Ok(seq)
    }
}

/// Reads a JSONL event log. Ordering is not checked here; see `replay_log`.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EventRecord>, LogError> {
    let text = fs::read_to_string(path)?;
    parse_log(&text)
}

pub fn parse_log(text: &str) -> Result<Vec<EventRecord>, LogError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| LogError::Corrupt {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
