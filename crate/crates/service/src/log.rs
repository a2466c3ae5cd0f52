use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::records::{DecisionRecord, PredictionSnapshot};
use crate::ServiceError;

pub const LOG_SCHEMA: &str = "decision-log/v1";

/// One line of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Prediction(PredictionSnapshot),
    Decision(DecisionRecord),
}

#[derive(Serialize, Deserialize)]
struct Line {
    schema: String,
    #[serde(flatten)]
    entry: LogEntry,
}

/// Append-only writer. Every append is flushed and fsynced before it
/// returns.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    /// Opens (creating if needed) the log at `path` and returns it with
    /// every entry already on disk. A trailing line without its newline is
    /// a write that was never acknowledged; it is cut off.
    pub fn open(path: &Path) -> Result<(Self, Vec<LogEntry>), ServiceError> {
        let io = |e: std::io::Error| ServiceError::Log(format!("{}: {e}", path.display()));
        let entries = if path.exists() {
            let file = File::open(path).map_err(io)?;
            let mut reader = BufReader::new(file);
            let mut entries = Vec::new();
            let mut good_len = 0u64;
            let mut line = String::new();
            let mut number = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line).map_err(io)?;
                if read == 0 || !line.ends_with('\n') {
                    break;
                }
                number += 1;
                good_len += read as u64;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: Line = serde_json::from_str(&line)
                    .map_err(|e| ServiceError::Log(format!("{} line {number}: {e}", path.display())))?;
                if parsed.schema != LOG_SCHEMA {
                    return Err(ServiceError::Log(format!(
                        "{} line {number}: schema {:?}, expected {LOG_SCHEMA:?}",
                        path.display(),
                        parsed.schema
                    )));
                }
                entries.push(parsed.entry);
            }
            let file = OpenOptions::new().write(true).open(path).map_err(io)?;
            if file.metadata().map_err(io)?.len() > good_len {
                file.set_len(good_len).map_err(io)?;
                file.sync_all().map_err(io)?;
            }
            entries
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok((Self { path: path.to_path_buf(), file }, entries))
    }

    pub fn append(&mut self, entry: &LogEntry) -> Result<(), ServiceError> {
        let mut text = serde_json::to_string(&Line { schema: LOG_SCHEMA.to_string(), entry: entry.clone() })
            .expect("log entries serialize");
        text.push('\n');
        let io = |e: std::io::Error| ServiceError::Log(format!("{}: {e}", self.path.display()));
        self.file.write_all(text.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
