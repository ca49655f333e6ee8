//! Append-only rating log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("rating log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("rating log {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("score {0} outside [0, 100]")]
    ScoreOutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater: String,
    pub token: String,
    pub level: u8,
    pub score: f64,
    /// RFC 3339 timestamp.
    pub submitted_at: String,
    #[serde(default)]
    pub time_on_case_s: Option<f64>,
}

pub fn validate_score(score: f64) -> Result<(), StoreError> {
    if score.is_finite() && (0.0..=100.0).contains(&score) {
        Ok(())
    } else {
        Err(StoreError::ScoreOutOfRange(score))
    }
}

type Key = (String, String, u8);

/// An effective rating and the number of submissions behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Effective {
    pub record: RatingRecord,
    pub submissions: usize,
}

#[derive(Default)]
struct State {
    history: Vec<RatingRecord>,
    latest: BTreeMap<Key, (usize, usize)>,
}

impl State {
    fn push(&mut self, r: RatingRecord) {
        let key = (r.rater.clone(), r.token.clone(), r.level);
        let idx = self.history.len();
        self.history.push(r);
        let entry = self.latest.entry(key).or_insert((idx, 0));
        entry.0 = idx;
        entry.1 += 1;
    }
}

pub struct RatingStore {
    path: PathBuf,
    inner: Mutex<(File, State)>,
}

impl RatingStore {
    /// Open or create the log and replay it. A final line without a newline
    /// is a torn write and is dropped from the file.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io)?;
        let mut state = State::default();
        let complete = match text.rfind('\n') {
            Some(p) => p + 1,
            None => 0,
        };
        for (n, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: RatingRecord = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            state.push(record);
        }
        if complete < text.len() {
            file.set_len(complete as u64).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new((file, state)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record durably.
    pub fn append(&self, record: RatingRecord) -> Result<(), StoreError> {
        validate_score(record.score)?;
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        let mut guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let (file, state) = &mut *guard;
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        file.write_all(line.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)?;
        state.push(record);
        Ok(())
    }

    pub fn history(&self) -> Vec<RatingRecord> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).1.history.clone()
    }

    /// Latest record per (rater, token, level), ordered by that key.
    pub fn effective(&self) -> Vec<Effective> {
        let guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let state = &guard.1;
        state
            .latest
            .values()
            .map(|&(idx, submissions)| Effective {
                record: state.history[idx].clone(),
                submissions,
            })
            .collect()
    }

    /// Levels with an effective rating for one token.
    pub fn rated_levels(&self, rater: &str, token: &str) -> Vec<u8> {
        let guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let lo = (rater.to_string(), token.to_string(), 0u8);
        let hi = (rater.to_string(), token.to_string(), u8::MAX);
        guard.1.latest.range(lo..=hi).map(|(k, _)| k.2).collect()
    }
}
