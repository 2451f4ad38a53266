//! Append-only JSON-lines event log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::StoreError;
use crate::configspace::ConfigAssignment;
use crate::engine::Candidate;
use crate::hpo::TrialRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LlmQuery,
    LlmResponse,
    ParseResult,
    HpoTrial,
    HpoIncumbent,
    Evaluation,
    Selection,
    Error,
    ConfigSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub sequence: u64,
    pub timestamp_ms: u64,
    pub kind: EventKind,
    pub payload: Value,
}

impl RunEvent {
    pub fn decode<T: for<'de> Deserialize<'de>>(&self) -> Result<T, StoreError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| StoreError::CorruptLog {
            line: self.sequence as usize + 1,
            reason: format!("bad {:?} payload: {e}", self.kind),
        })
    }
}

/// Where event timestamps come from. `Logical` stamps each event with its
/// sequence number so that scripted runs produce identical logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Wall,
    Logical,
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_sequence: u64,
    clock: Clock,
}

impl EventLog {
    pub fn open(path: &Path, clock: Clock) -> Result<Self, StoreError> {
        let existing = if path.exists() { read_events(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| StoreError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file, next_sequence: existing.len() as u64, clock })
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    pub fn append(&mut self, kind: EventKind, payload: &impl Serialize) -> Result<RunEvent, StoreError> {
        let timestamp_ms = match self.clock {
            Clock::Logical => self.next_sequence,
            Clock::Wall => SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
        };
        let event = RunEvent {
            sequence: self.next_sequence,
            timestamp_ms,
            kind,
            payload: serde_json::to_value(payload).expect("event payloads serialize"),
        };
        let mut line = serde_json::to_string(&event).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| StoreError::io(&self.path, e))?;
        self.file.flush().map_err(|e| StoreError::io(&self.path, e))?;
        self.next_sequence += 1;
        Ok(event)
    }

    /// Keeps only the first `keep` events. Used when resuming after a crash
    /// in the middle of a candidate.
    pub fn truncate(&mut self, keep: usize) -> Result<(), StoreError> {
        let text = fs::read_to_string(&self.path).map_err(|e| StoreError::io(&self.path, e))?;
        let kept: String = text.split_inclusive('\n').take(keep).collect();
        fs::write(&self.path, kept).map_err(|e| StoreError::io(&self.path, e))?;
        self.file = OpenOptions::new().append(true).open(&self.path).map_err(|e| StoreError::io(&self.path, e))?;
        self.next_sequence = keep as u64;
        Ok(())
    }
}

/// Parses a log, requiring sequence numbers 0, 1, 2, ... without gaps.
pub fn parse_events(text: &str) -> Result<Vec<RunEvent>, StoreError> {
    let mut events = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let corrupt = |reason: String| StoreError::CorruptLog { line: i + 1, reason };
        if !line.ends_with('\n') {
            return Err(corrupt("unterminated final line".into()));
        }
        let event: RunEvent = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if event.sequence != i as u64 {
            return Err(corrupt(format!("expected sequence {i}, found {}", event.sequence)));
        }
        events.push(event);
    }
    Ok(events)
}

pub fn read_events(path: &Path) -> Result<Vec<RunEvent>, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    parse_events(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmQueryEvent {
    pub query_index: u64,
    pub candidate_id: u64,
    /// `task` for the initial generation, `feedback` for mutations.
    pub prompt_kind: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponseEvent {
    pub query_index: u64,
    pub candidate_id: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResultEvent {
    pub candidate_id: u64,
    pub name: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoTrialEvent {
    pub candidate_id: u64,
    pub trial: TrialRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoIncumbentEvent {
    pub candidate_id: u64,
    pub assignment: ConfigAssignment,
    pub mean_cost: f64,
    pub instances_seen: usize,
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub candidate_id: Option<u64>,
    /// `llm`, `parse`, `tuning` or `evaluation`.
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationEvent {
    pub candidate: Candidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub candidate_id: u64,
    pub accepted: bool,
    pub best_id: u64,
    pub best_fitness: f64,
    pub best_raw: Option<f64>,
    pub llm_queries: u64,
    pub instance_evals_total: u64,
    pub full_set_size: u64,
    /// Reduced fraction `instance_evals_total / full_set_size`.
    pub full_benchmark_evals: String,
}
