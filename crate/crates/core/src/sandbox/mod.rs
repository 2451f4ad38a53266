//! Out-of-process execution of candidate code.
//!
//! Each [`Session`] owns one child process speaking the JSON-lines protocol
//! in [`protocol`]. Replies are read on a background thread so every call can
//! be bounded by a wall-clock timeout; the child is killed and reaped on
//! timeout, protocol violation, or drop.

pub mod protocol;

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use protocol::{Message, Role};

const STDERR_TAIL_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxLimits {
    pub wall_timeout_per_call: Duration,
    pub wall_timeout_total: Duration,
    pub max_reply_bytes: usize,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        Self {
            wall_timeout_per_call: Duration::from_secs(60),
            wall_timeout_total: Duration::from_secs(600),
            max_reply_bytes: 16 * 1024 * 1024,
        }
    }
}

/// Command line that starts a protocol-speaking child.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ShimCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self { program: program.into(), args: Vec::new() }
    }

    /// Splits a whitespace-separated command line.
    pub fn parse(command_line: &str) -> Option<Self> {
        let mut parts = command_line.split_whitespace();
        let program = parts.next()?;
        Some(Self { program: program.into(), args: parts.map(str::to_string).collect() })
    }
}

impl std::fmt::Display for ShimCommand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.program.display())?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SandboxError {
    #[error("failed to start sandbox child `{command}`: {reason}")]
    SpawnFailure { command: String, reason: String },
    #[error("candidate failed to initialize:\n{traceback}")]
    InitError { traceback: String },
    #[error("candidate raised an error:\n{traceback}")]
    CandidateError { traceback: String },
    #[error("sandbox call timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("candidate process died{}", .traceback.as_deref().map(|t| format!(":\n{t}")).unwrap_or_default())]
    ChildDied { traceback: Option<String> },
}

impl SandboxError {
    /// Text suitable for a candidate's error record.
    pub fn traceback(&self) -> String {
        match self {
            SandboxError::InitError { traceback } | SandboxError::CandidateError { traceback } => traceback.clone(),
            SandboxError::ChildDied { traceback: Some(t) } => t.clone(),
            other => other.to_string(),
        }
    }
}

enum ReaderEvent {
    Line(String),
    Oversize,
    Eof,
    Failed(String),
}

#[derive(Default)]
struct StderrTail {
    bytes: VecDeque<u8>,
}

impl StderrTail {
    fn push(&mut self, chunk: &[u8]) {
        self.bytes.extend(chunk);
        let excess = self.bytes.len().saturating_sub(STDERR_TAIL_BYTES);
        self.bytes.drain(..excess);
    }

    fn text(&self) -> String {
        let (a, b) = self.bytes.as_slices();
        let mut all = a.to_vec();
        all.extend_from_slice(b);
        String::from_utf8_lossy(&all).into_owned()
    }
}

/// A live child process bound to one candidate and one role.
pub struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<ReaderEvent>,
    stderr_tail: Arc<Mutex<StderrTail>>,
    stderr_thread: Option<JoinHandle<()>>,
    role: Role,
    limits: SandboxLimits,
    started: Instant,
    closed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub role: Role,
    pub code: String,
    pub config: String,
    pub seed: u64,
}

impl Session {
    /// Starts the child, sends `Init`, and waits for `Ready`.
    pub fn spawn(command: &ShimCommand, init: &InitSpec, limits: &SandboxLimits) -> Result<Self, SandboxError> {
        Self::spawn_with_stderr_log(command, init, limits, None)
    }

    /// As [`Session::spawn`], additionally appending child stderr to `stderr_log`.
    pub fn spawn_with_stderr_log(
        command: &ShimCommand,
        init: &InitSpec,
        limits: &SandboxLimits,
        stderr_log: Option<File>,
    ) -> Result<Self, SandboxError> {
        let mut child = Command::new(&command.program)
            .args(&command.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SandboxError::SpawnFailure { command: command.to_string(), reason: e.to_string() })?;

        let stdout = child.stdout.take().expect("stdout is piped");
        let stderr = child.stderr.take().expect("stderr is piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        let max = limits.max_reply_bytes;
        thread::spawn(move || read_replies(stdout, max, tx));
        let stderr_tail = Arc::new(Mutex::new(StderrTail::default()));
        let tail = Arc::clone(&stderr_tail);
        let stderr_thread = thread::spawn(move || drain_stderr(stderr, tail, stderr_log));

        let mut session = Session {
            child,
            stdin,
            replies: rx,
            stderr_tail,
            stderr_thread: Some(stderr_thread),
            role: init.role,
            limits: limits.clone(),
            started: Instant::now(),
            closed: false,
        };
        let init_msg = Message::Init {
            role: init.role,
            code: init.code.clone(),
            config: init.config.clone(),
            seed: init.seed,
        };
        match session.exchange(&init_msg) {
            Ok(Message::Ready {}) => Ok(session),
            Ok(Message::ErrorReport { traceback }) => Err(SandboxError::InitError { traceback }),
            Ok(other) => Err(session.violation(format!("expected Ready after Init, got {}", other.type_name()))),
            Err(SandboxError::ChildDied { traceback }) => Err(SandboxError::InitError {
                traceback: traceback.unwrap_or_else(|| "candidate process exited during initialization".into()),
            }),
            Err(e) => Err(e),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Sends a request and returns the matching reply. An `ErrorReport`
    /// reply becomes [`SandboxError::CandidateError`].
    pub fn call(&mut self, request: &Message) -> Result<Message, SandboxError> {
        let expected = match (request.request_role(), request) {
            (Some(role), _) if role != self.role => {
                return Err(SandboxError::ProtocolViolation(format!(
                    "{} sent to a {}-role session",
                    request.type_name(),
                    self.role
                )))
            }
            (_, Message::ScoreRequest { .. }) => "ScoreReply",
            (_, Message::UpdateMatrixRequest { .. }) => "UpdateMatrixReply",
            (_, other) => {
                return Err(SandboxError::ProtocolViolation(format!(
                    "{} is not a request/reply message",
                    other.type_name()
                )))
            }
        };
        match self.exchange(request)? {
            Message::ErrorReport { traceback } => Err(SandboxError::CandidateError { traceback }),
            reply if reply.type_name() == expected => Ok(reply),
            reply => Err(self.violation(format!("expected {expected}, got {}", reply.type_name()))),
        }
    }

    /// Runs the candidate optimizer against `objective` for at most
    /// `task.budget` evaluations.
    ///
    /// Runtime failures are reported in [`OptimizeOutcome::failure`] with the
    /// trajectory collected up to that point.
    pub fn drive_optimize(
        &mut self,
        task: &OptimizeTask,
        objective: &mut dyn FnMut(&[f64]) -> f64,
    ) -> Result<OptimizeOutcome, SandboxError> {
        if self.role != Role::Optimize {
            return Err(SandboxError::ProtocolViolation(format!(
                "OptimizeRequest sent to a {}-role session",
                self.role
            )));
        }
        let mut outcome = OptimizeOutcome::default();
        let request = Message::OptimizeRequest { budget: task.budget, dim: task.dim, lb: task.lb, ub: task.ub };
        let mut next = self.exchange(&request);
        loop {
            let msg = match next {
                Ok(msg) => msg,
                Err(SandboxError::ChildDied { traceback }) if traceback.is_none() && outcome.evaluations > 0 => {
                    tracing::warn!(evaluations = outcome.evaluations, "optimizer exited without OptimizeDone");
                    outcome.termination = Termination::ExitedEarly;
                    return Ok(outcome);
                }
                Err(e @ (SandboxError::ChildDied { .. } | SandboxError::Timeout(_))) => {
                    outcome.termination = Termination::Failed;
                    outcome.failure = Some(e);
                    return Ok(outcome);
                }
                Err(e) => return Err(e),
            };
            match msg {
                Message::EvalQuery { x } => {
                    if x.len() != task.dim {
                        return Err(self.violation(format!("EvalQuery with {} coordinates, expected {}", x.len(), task.dim)));
                    }
                    if outcome.evaluations as u64 >= task.budget {
                        let refusal = Message::ErrorReport { traceback: "budget exhausted".into() };
                        let _ = self.send(&refusal);
                        self.shutdown();
                        outcome.termination = Termination::BudgetExhausted;
                        return Ok(outcome);
                    }
                    let f = objective(&x);
                    outcome.evaluations += 1;
                    let precision = (f - task.f_opt).max(0.0);
                    let best = outcome.trajectory.last().map_or(precision, |&b: &f64| b.min(precision));
                    outcome.trajectory.push(best);
                    next = self.exchange(&Message::EvalReply { f });
                }
                Message::OptimizeDone { f_opt, x_opt } => {
                    outcome.f_opt = Some(f_opt);
                    outcome.x_opt = Some(x_opt);
                    outcome.termination = Termination::Done;
                    return Ok(outcome);
                }
                Message::ErrorReport { traceback } => {
                    outcome.termination = Termination::Failed;
                    outcome.failure = Some(SandboxError::CandidateError { traceback });
                    return Ok(outcome);
                }
                other => return Err(self.violation(format!("unexpected {} during optimization", other.type_name()))),
            }
        }
    }

    /// Sends `Shutdown`, gives the child a moment to exit, then kills it.
    pub fn shutdown(&mut self) {
        if self.closed {
            return;
        }
        let _ = self.send(&Message::Shutdown {});
        self.stdin = None;
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                self.closed = true;
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        self.kill();
    }

    /// Last bytes written by the child to stderr.
    pub fn stderr_tail(&self) -> String {
        self.stderr_tail.lock().map(|t| t.text()).unwrap_or_default()
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    fn send(&mut self, msg: &Message) -> Result<(), SandboxError> {
        let stdin = self.stdin.as_mut().ok_or(SandboxError::ChildDied { traceback: None })?;
        let mut line = msg.to_line();
        line.push('\n');
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|_| SandboxError::ChildDied { traceback: None })
    }

    /// Writes one line and waits for one reply line.
    fn exchange(&mut self, msg: &Message) -> Result<Message, SandboxError> {
        if self.closed {
            return Err(SandboxError::ChildDied { traceback: None });
        }
        if self.send(msg).is_err() {
            return Err(self.died());
        }
        self.receive()
    }

    fn receive(&mut self) -> Result<Message, SandboxError> {
        let elapsed = self.started.elapsed();
        let remaining = self.limits.wall_timeout_total.saturating_sub(elapsed);
        let wait = self.limits.wall_timeout_per_call.min(remaining);
        match self.replies.recv_timeout(wait) {
            Ok(ReaderEvent::Line(line)) => {
                let msg = Message::from_line(&line).map_err(|e| self.violation(format!("malformed line: {e}")))?;
                if !msg.all_finite() {
                    return Err(self.violation(format!("non-finite number in {}", msg.type_name())));
                }
                Ok(msg)
            }
            Ok(ReaderEvent::Oversize) => {
                Err(self.violation(format!("reply exceeds {} bytes", self.limits.max_reply_bytes)))
            }
            Ok(ReaderEvent::Failed(e)) => Err(self.violation(format!("unreadable output: {e}"))),
            Ok(ReaderEvent::Eof) | Err(RecvTimeoutError::Disconnected) => Err(self.died()),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(SandboxError::Timeout(wait))
            }
        }
    }

    fn violation(&mut self, reason: String) -> SandboxError {
        self.kill();
        SandboxError::ProtocolViolation(reason)
    }

    /// Reaps an exiting child and returns its captured stderr as the traceback.
    fn died(&mut self) -> SandboxError {
        self.stdin = None;
        let deadline = Instant::now() + Duration::from_secs(2);
        let mut status = None;
        while Instant::now() < deadline {
            if let Ok(Some(s)) = self.child.try_wait() {
                status = Some(s);
                break;
            }
            thread::sleep(Duration::from_millis(2));
        }
        if status.is_none() {
            self.kill();
        } else {
            self.closed = true;
            if let Some(h) = self.stderr_thread.take() {
                let _ = h.join();
            }
        }
        let tail = self.stderr_tail();
        let clean_exit = status.is_some_and(|s| s.success());
        let traceback = if tail.trim().is_empty() {
            (!clean_exit).then(|| format!("process exited with {}", status.map_or("unknown status".into(), |s| s.to_string())))
        } else {
            Some(tail)
        };
        SandboxError::ChildDied { traceback }
    }

    fn kill(&mut self) {
        if self.closed {
            return;
        }
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.closed = true;
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.kill();
    }
}

fn read_replies(stdout: impl Read, max: usize, tx: mpsc::Sender<ReaderEvent>) {
    let mut reader = BufReader::new(stdout);
    loop {
        let mut buf = Vec::new();
        let event = match (&mut reader).take(max as u64 + 1).read_until(b'\n', &mut buf) {
            Ok(0) => ReaderEvent::Eof,
            Ok(_) if buf.len() > max && buf.last() != Some(&b'\n') => ReaderEvent::Oversize,
            Ok(_) => match String::from_utf8(buf) {
                Ok(line) => ReaderEvent::Line(line),
                Err(e) => ReaderEvent::Failed(e.to_string()),
            },
            Err(e) => ReaderEvent::Failed(e.to_string()),
        };
        let stop = !matches!(event, ReaderEvent::Line(_));
        if tx.send(event).is_err() || stop {
            return;
        }
    }
}

fn drain_stderr(mut stderr: impl Read, tail: Arc<Mutex<StderrTail>>, mut log: Option<File>) {
    let mut chunk = [0u8; 4096];
    loop {
        match stderr.read(&mut chunk) {
            Ok(0) | Err(_) => return,
            Ok(n) => {
                if let Ok(mut t) = tail.lock() {
                    t.push(&chunk[..n]);
                }
                if let Some(f) = log.as_mut() {
                    let _ = f.write_all(&chunk[..n]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeTask {
    pub budget: u64,
    pub dim: usize,
    pub lb: f64,
    pub ub: f64,
    /// Known optimum value, used to turn function values into precision.
    pub f_opt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Done,
    BudgetExhausted,
    /// The child exited cleanly without reporting a result.
    ExitedEarly,
    #[default]
    Failed,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizeOutcome {
    /// Values reported by the candidate in `OptimizeDone`, if it sent one.
    pub f_opt: Option<f64>,
    pub x_opt: Option<Vec<f64>>,
    /// Best precision after each evaluation.
    pub trajectory: Vec<f64>,
    pub evaluations: usize,
    pub termination: Termination,
    pub failure: Option<SandboxError>,
}
