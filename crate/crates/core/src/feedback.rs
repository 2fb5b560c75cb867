//! Append-only user feedback log (newline-delimited JSON).

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_RATING: u8 = 1;
pub const MAX_RATING: u8 = 5;
pub const LOG_FILE_NAME: &str = "feedback.log";

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("rating must be between {MIN_RATING} and {MAX_RATING}, got {0}")]
    InvalidRating(i64),
    #[error("question and answer must not be empty")]
    EmptyField,
    #[error("corrupt feedback log at line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub id: String,
    pub question: String,
    pub final_answer: String,
    pub references: Vec<String>,
    pub rating: u8,
    pub comment: Option<String>,
    /// UTC seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Fields supplied by the user; id and timestamp are assigned by the log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewFeedback {
    pub question: String,
    pub final_answer: String,
    #[serde(default)]
    pub references: Vec<String>,
    pub rating: i64,
    #[serde(default)]
    pub comment: Option<String>,
}

impl NewFeedback {
    pub fn validate(&self) -> Result<u8, FeedbackError> {
        if !(MIN_RATING as i64..=MAX_RATING as i64).contains(&self.rating) {
            return Err(FeedbackError::InvalidRating(self.rating));
        }
        if self.question.trim().is_empty() || self.final_answer.trim().is_empty() {
            return Err(FeedbackError::EmptyField);
        }
        Ok(self.rating as u8)
    }
}

/// Records are appended one JSON object per line and synced to disk before
/// `append` returns. Timestamps never decrease within a log.
#[derive(Debug)]
pub struct FeedbackLog {
    path: PathBuf,
    file: File,
    records: Vec<FeedbackRecord>,
}

impl FeedbackLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, FeedbackError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let records = if path.exists() {
            let (records, valid_len) = scan(&path)?;
            // drop a torn trailing write so new lines start on a boundary
            let file = OpenOptions::new().write(true).open(&path)?;
            if file.metadata()?.len() > valid_len {
                file.set_len(valid_len)?;
            }
            records
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file,
            records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[FeedbackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append(&mut self, new: NewFeedback) -> Result<FeedbackRecord, FeedbackError> {
        self.append_at(new, now_secs())
    }

    pub fn append_at(&mut self, new: NewFeedback, now: u64) -> Result<FeedbackRecord, FeedbackError> {
        let rating = new.validate()?;
        let last = self.records.last().map(|r| r.timestamp).unwrap_or(0);
        let record = FeedbackRecord {
            id: format!("fb-{:06}", self.records.len() + 1),
            question: new.question,
            final_answer: new.final_answer,
            references: new.references,
            rating,
            comment: new.comment,
            timestamp: now.max(last),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.records.push(record.clone());
        Ok(record)
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Reads every complete line. A final line without a trailing newline is a
/// torn write and is ignored.
pub fn read_records(path: &Path) -> Result<Vec<FeedbackRecord>, FeedbackError> {
    Ok(scan(path)?.0)
}

fn scan(path: &Path) -> Result<(Vec<FeedbackRecord>, u64), FeedbackError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut lineno = 0;
    let mut valid_len = 0u64;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if !line.ends_with('\n') {
            break;
        }
        valid_len += n as u64;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeedbackRecord = serde_json::from_str(&line).map_err(|e| FeedbackError::Corrupt {
            line: lineno,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok((out, valid_len))
}
