//! Access to the language model: a live chat-completions client and a
//! scripted source for deterministic runs.

mod live;
mod parse;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{ChatCompletionsClient, LiveConfig};
pub use parse::{parse_response, ParseError, ParsedResponse, Section};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system_message: String,
    pub user_message: String,
    pub temperature: f64,
    pub model_name: String,
}

impl LlmRequest {
    pub fn new(user_message: impl Into<String>) -> Self {
        Self {
            system_message: String::new(),
            user_message: user_message.into(),
            temperature: 1.0,
            model_name: "gpt-4o-2024-05-13".to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("language model unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("scripted responses exhausted after {served} response(s)")]
    ScriptExhausted { served: usize },
    #[error("request has an empty user message")]
    EmptyRequest,
    #[error("reading script directory: {0}")]
    Io(#[from] std::io::Error),
}

pub trait LlmGateway {
    /// Sends one single-shot request and returns the assistant message body.
    fn query(&mut self, req: &LlmRequest) -> Result<String, LlmError>;

    /// Called when a run resumes after `served` answered queries.
    fn resume_after(&mut self, _served: usize) {}
}

/// Replays a fixed list of responses in order. Never wraps around.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSource {
    responses: Vec<String>,
    cursor: usize,
}

impl ScriptedSource {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { responses: responses.into_iter().map(Into::into).collect(), cursor: 0 }
    }

    /// Loads every regular file in `dir`, in lexicographic file-name order.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, LlmError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let responses = paths.iter().map(fs::read_to_string).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(responses))
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.responses.len() - self.cursor
    }

    /// Moves past responses already consumed by an earlier, interrupted run.
    pub fn skip(&mut self, n: usize) {
        self.cursor = (self.cursor + n).min(self.responses.len());
    }
}

impl LlmGateway for ScriptedSource {
    fn query(&mut self, req: &LlmRequest) -> Result<String, LlmError> {
        if req.user_message.is_empty() {
            return Err(LlmError::EmptyRequest);
        }
        let response = self
            .responses
            .get(self.cursor)
            .cloned()
            .ok_or(LlmError::ScriptExhausted { served: self.cursor })?;
        self.cursor += 1;
        Ok(response)
    }

    fn resume_after(&mut self, served: usize) {
        self.cursor = 0;
        self.skip(served);
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for Box<G> {
    fn query(&mut self, req: &LlmRequest) -> Result<String, LlmError> {
        (**self).query(req)
    }

    fn resume_after(&mut self, served: usize) {
        (**self).resume_after(served)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_source_serves_then_exhausts() {
        let mut src = ScriptedSource::new(["X"]);
        let req = LlmRequest::new("prompt");
        assert_eq!(src.query(&req).unwrap(), "X");
        assert!(matches!(src.query(&req), Err(LlmError::ScriptExhausted { served: 1 })));
        assert!(matches!(src.query(&req), Err(LlmError::ScriptExhausted { .. })));
    }

    #[test]
    fn script_dir_is_read_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [("10.txt", "third"), ("02.txt", "second"), ("01.txt", "first")] {
            fs::write(dir.path().join(name), body).unwrap();
        }
        let mut src = ScriptedSource::from_dir(dir.path()).unwrap();
        let req = LlmRequest::new("p");
        let got: Vec<String> = (0..3).map(|_| src.query(&req).unwrap()).collect();
        assert_eq!(got, ["first", "second", "third"]);
    }

    #[test]
    fn empty_user_message_is_rejected() {
        let mut src = ScriptedSource::new(["X"]);
        assert!(matches!(src.query(&LlmRequest::new("")), Err(LlmError::EmptyRequest)));
        assert_eq!(src.cursor(), 0);
    }
}
