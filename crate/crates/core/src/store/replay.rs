//! Rebuilds run state from an event log.

use serde_json::Value;

use super::events::{EvaluationEvent, EventKind, RunEvent, SelectionEvent};
use super::StoreError;
use crate::engine::{display_name, Candidate, RunState};

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub config: Option<Value>,
    pub candidates: Vec<Candidate>,
    pub selections: Vec<SelectionEvent>,
    pub state: RunState,
    /// Length of the event prefix ending at the last selection (or at the
    /// config snapshot when no candidate completed).
    pub complete_events: usize,
}

pub fn replay(events: &[RunEvent]) -> Result<Replay, StoreError> {
    let mut config = None;
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut selections = Vec::new();
    let mut state = RunState::default();
    let mut complete_events = 0;
    let mut pending: Option<Candidate> = None;
    for (i, ev) in events.iter().enumerate() {
        let corrupt = |reason: String| StoreError::CorruptLog { line: i + 1, reason };
        if ev.sequence != i as u64 {
            return Err(corrupt(format!("expected sequence {i}, found {}", ev.sequence)));
        }
        match ev.kind {
            EventKind::ConfigSnapshot => {
                if i != 0 {
                    return Err(corrupt("config snapshot after the first event".into()));
                }
                config = Some(ev.payload.clone());
                complete_events = 1;
            }
            EventKind::Evaluation => {
                let EvaluationEvent { candidate } = ev.decode()?;
                pending = Some(candidate);
            }
            EventKind::Selection => {
                let sel: SelectionEvent = ev.decode()?;
                let cand = pending
                    .take()
                    .filter(|c| c.id == sel.candidate_id)
                    .ok_or_else(|| corrupt(format!("selection of candidate {} without its evaluation", sel.candidate_id)))?;
                state.history.push((display_name(&cand), cand.fitness));
                candidates.push(cand);
                let best = candidates
                    .iter()
                    .find(|c| c.id == sel.best_id)
                    .ok_or_else(|| corrupt(format!("best candidate {} is unknown", sel.best_id)))?;
                state.best = Some(best.clone());
                state.t = sel.llm_queries;
                state.instance_evals_total = sel.instance_evals_total;
                state.full_set_size = sel.full_set_size;
                selections.push(sel);
                complete_events = i + 1;
            }
            _ => {}
        }
    }
    Ok(Replay { config, candidates, selections, state, complete_events })
}
