pub mod bbob;
pub mod binpack;
pub mod harness;
pub mod tsp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configspace::{ConfigAssignment, ConfigSpace};

pub use harness::{BbobBenchmark, BinPackBenchmark, SandboxRunner, TspBenchmark};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Binpack,
    Bbob,
    Tsp,
}

impl Problem {
    pub const ALL: [Problem; 3] = [Problem::Binpack, Problem::Bbob, Problem::Tsp];

    pub fn as_str(self) -> &'static str {
        match self {
            Problem::Binpack => "binpack",
            Problem::Bbob => "bbob",
            Problem::Tsp => "tsp",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown problem `{0}` (expected binpack, bbob or tsp)")]
pub struct UnknownProblem(pub String);

impl FromStr for Problem {
    type Err = UnknownProblem;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Problem::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownProblem(s.to_string()))
    }
}

/// A parsed candidate ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub id: u64,
    pub code: String,
    pub space: ConfigSpace,
}

/// A file produced by a full-set evaluation, relative to the candidate's
/// output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Larger is better.
    pub fitness: f64,
    pub fitness_std: f64,
    /// The benchmark's own reporting value: 1 - lb/n, mean AOCC, or mean gap.
    pub raw: f64,
    pub artifacts: Vec<Artifact>,
}

/// What the evolution loop needs from a benchmark. Instances are addressed by
/// their index in the full set.
pub trait Benchmark: Sync {
    fn problem(&self) -> Problem;

    /// Parameter names the candidate may not declare in its space.
    fn reserved_params(&self) -> &'static [&'static str] {
        &[]
    }

    fn instance_count(&self) -> usize;

    fn training_instances(&self) -> &[usize];

    /// Tuning cost of one configuration on one instance (lower is better).
    fn instance_cost(&self, program: &Program, config: &ConfigAssignment, instance: usize, seed: u64) -> Result<f64, String>;

    /// Evaluates a configuration on every instance. Errors carry the
    /// candidate's traceback.
    fn evaluate_full(&self, program: &Program, config: &ConfigAssignment, seed: u64) -> Result<Evaluation, String>;
}
