//! Run directory layout, event log, replay and export.
//!
//! ```text
//! <run>/config.json         (written by the command-line front end)
//! <run>/events.jsonl
//! <run>/best.json
//! <run>/candidates/<id>/{code.py, space.txt, tuned.json, result.json, results/}
//! <run>/trajectories/<id>/f<fid>_i<iid>_s<seed>.csv
//! ```

pub mod events;
pub mod export;
pub mod replay;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use events::{Clock, EventKind, EventLog, RunEvent};
pub use export::{export_convergence, ConvergencePoint, Series};
pub use replay::{replay, Replay};

use crate::bench::Artifact;
use crate::configspace::ConfigAssignment;
use crate::engine::Candidate;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt event log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("{0}")]
    Inconsistent(String),
    #[error("writer halted after {0} events")]
    Halted(u64),
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io { path: path.display().to_string(), source }
    }
}

/// Contents of `best.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub candidate_id: u64,
    pub name: String,
    pub fitness: f64,
    pub fitness_std: f64,
    pub raw: Option<f64>,
    pub tuned: Option<ConfigAssignment>,
    pub llm_query_index: u64,
}

impl From<&Candidate> for BestRecord {
    fn from(c: &Candidate) -> Self {
        Self {
            candidate_id: c.id,
            name: c.name.clone(),
            fitness: c.fitness,
            fitness_std: c.fitness_std,
            raw: c.raw,
            tuned: c.tuned.clone(),
            llm_query_index: c.llm_query_index,
        }
    }
}

#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    log: EventLog,
    halt_after: Option<u64>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| StoreError::io(path, e))
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("run records serialize");
    s.push('\n');
    s
}

impl RunStore {
    /// Opens or creates a run directory. A torn final log line left by a
    /// killed writer is dropped.
    pub fn open(dir: impl Into<PathBuf>, clock: Clock) -> Result<Self, StoreError> {
        let dir = dir.into();
        for sub in ["candidates", "trajectories"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| StoreError::io(&p, e))?;
        }
        let path = dir.join("events.jsonl");
        if path.exists() {
            let text = fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
            if !text.is_empty() && text.last() != Some(&b'\n') {
                let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
                fs::write(&path, &text[..keep]).map_err(|e| StoreError::io(&path, e))?;
            }
        }
        let log = EventLog::open(&path, clock)?;
        Ok(Self { dir, log, halt_after: None })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn events_path(&self) -> PathBuf {
        self.dir.join("events.jsonl")
    }

    pub fn events(&self) -> Result<Vec<RunEvent>, StoreError> {
        events::read_events(&self.events_path())
    }

    pub fn append(&mut self, kind: EventKind, payload: &impl Serialize) -> Result<RunEvent, StoreError> {
        if self.halt_after.is_some_and(|n| self.log.next_sequence() >= n) {
            return Err(StoreError::Halted(self.log.next_sequence()));
        }
        self.log.append(kind, payload)
    }

    /// Refuses every append once the log holds `events` events, as if the
    /// process had been killed there.
    #[doc(hidden)]
    pub fn halt_after_events(&mut self, events: u64) {
        self.halt_after = Some(events);
    }

    pub fn truncate_events(&mut self, keep: usize) -> Result<(), StoreError> {
        self.log.truncate(keep)
    }

    pub fn write_config(&self, config: &Value) -> Result<(), StoreError> {
        write(&self.dir.join("config.json"), pretty(config))
    }

    pub fn candidate_dir(&self, id: u64) -> PathBuf {
        self.dir.join("candidates").join(id.to_string())
    }

    /// Writes the candidate's files. The code is stored byte for byte.
    pub fn save_candidate(&self, c: &Candidate) -> Result<(), StoreError> {
        let dir = self.candidate_dir(c.id);
        write(&dir.join("code.py"), &c.code)?;
        write(&dir.join("space.txt"), &c.space_text)?;
        write(&dir.join("tuned.json"), pretty(&c.tuned))?;
        write(&dir.join("result.json"), pretty(c))
    }

    pub fn load_candidate(&self, id: u64) -> Result<Candidate, StoreError> {
        let dir = self.candidate_dir(id);
        let path = dir.join("result.json");
        let text = fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
        let mut c: Candidate =
            serde_json::from_str(&text).map_err(|e| StoreError::Inconsistent(format!("{}: {e}", path.display())))?;
        let code_path = dir.join("code.py");
        c.code = fs::read_to_string(&code_path).map_err(|e| StoreError::io(&code_path, e))?;
        Ok(c)
    }

    pub fn save_artifacts(&self, relative_dir: &Path, artifacts: &[Artifact]) -> Result<(), StoreError> {
        for a in artifacts {
            write(&self.dir.join(relative_dir).join(&a.path), &a.contents)?;
        }
        Ok(())
    }

    pub fn save_best(&self, c: &Candidate) -> Result<(), StoreError> {
        write(&self.dir.join("best.json"), pretty(&BestRecord::from(c)))
    }

    pub fn load_best(dir: &Path) -> Result<BestRecord, StoreError> {
        let path = dir.join("best.json");
        let text = fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Inconsistent(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torn_tail_is_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = RunStore::open(dir.path(), Clock::Logical).unwrap();
            s.append(EventKind::Error, &serde_json::json!({})).unwrap();
        }
        let path = dir.path().join("events.jsonl");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"sequence\":1,\"ti");
        fs::write(&path, text).unwrap();
        let s = RunStore::open(dir.path(), Clock::Logical).unwrap();
        assert_eq!(s.events().unwrap().len(), 1);
    }
}
