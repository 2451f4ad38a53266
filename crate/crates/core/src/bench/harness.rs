//! Benchmarks backed by sandboxed candidate processes.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::bbob::{self, RunSlot, Suite, Trajectory};
use super::binpack::{self, BinPackError, BinPackInstance, Scorer};
use super::tsp::{self, EdgeUpdater, TspError, TspInstance, TspResult};
use super::{Artifact, Benchmark, Evaluation, Problem, Program};
use crate::configspace::{serialize_assignment, ConfigAssignment};
use crate::sandbox::{InitSpec, Message, OptimizeTask, Role, SandboxError, SandboxLimits, Session, ShimCommand, Termination};

/// Starts candidate sessions with a fixed shim command and limits.
#[derive(Debug, Clone)]
pub struct SandboxRunner {
    pub command: ShimCommand,
    pub limits: SandboxLimits,
    /// When set, child stderr is appended to `candidate-<id>.stderr` here.
    pub stderr_dir: Option<PathBuf>,
}

impl SandboxRunner {
    pub fn new(command: ShimCommand) -> Self {
        Self { command, limits: SandboxLimits::default(), stderr_dir: None }
    }

    pub fn open(&self, role: Role, program: &Program, config: &ConfigAssignment, seed: u64) -> Result<Session, SandboxError> {
        let init = InitSpec {
            role,
            code: program.code.clone(),
            config: serialize_assignment(config, &program.space),
            seed,
        };
        let log = self.stderr_dir.as_ref().and_then(|dir| {
            OpenOptions::new().create(true).append(true).open(dir.join(format!("candidate-{}.stderr", program.id))).ok()
        });
        Session::spawn_with_stderr_log(&self.command, &init, &self.limits, log)
    }
}

impl Scorer for Session {
    fn score(&mut self, item: i64, bins: &[i64]) -> Result<Vec<f64>, SandboxError> {
        match self.call(&Message::ScoreRequest { item, bins: bins.to_vec() })? {
            Message::ScoreReply { scores } => Ok(scores),
            other => Err(SandboxError::ProtocolViolation(format!("expected ScoreReply, got {}", other.type_name()))),
        }
    }
}

impl EdgeUpdater for Session {
    fn update(
        &mut self,
        edge_distance: &[Vec<f64>],
        local_opt_tour: &[usize],
        edge_n_used: &[Vec<u64>],
    ) -> Result<Vec<Vec<f64>>, SandboxError> {
        let request = Message::UpdateMatrixRequest {
            edge_distance: edge_distance.to_vec(),
            local_opt_tour: local_opt_tour.to_vec(),
            edge_n_used: edge_n_used.to_vec(),
        };
        match self.call(&request)? {
            Message::UpdateMatrixReply { updated } => Ok(updated),
            other => Err(SandboxError::ProtocolViolation(format!("expected UpdateMatrixReply, got {}", other.type_name()))),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn instance_seed(seed: u64, instance: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(instance as u64)
}

fn binpack_failure(e: BinPackError) -> String {
    match e {
        BinPackError::Scorer(s) => s.traceback(),
        other => other.to_string(),
    }
}

pub struct BinPackBenchmark {
    pub runner: SandboxRunner,
    pub instances: Vec<BinPackInstance>,
    pub training: Vec<usize>,
}

impl BinPackBenchmark {
    /// Training on every instance.
    pub fn new(runner: SandboxRunner, instances: Vec<BinPackInstance>) -> Self {
        let training = (0..instances.len()).collect();
        Self { runner, instances, training }
    }

    fn ratio(&self, program: &Program, config: &ConfigAssignment, instance: usize, seed: u64) -> Result<f64, String> {
        let mut session = self.runner.open(Role::Score, program, config, seed).map_err(|e| e.traceback())?;
        let result = binpack::evaluate_instance(&self.instances[instance], &mut session).map_err(binpack_failure)?;
        Ok(result.ratio)
    }
}

impl Benchmark for BinPackBenchmark {
    fn problem(&self) -> Problem {
        Problem::Binpack
    }

    fn instance_count(&self) -> usize {
        self.instances.len()
    }

    fn training_instances(&self) -> &[usize] {
        &self.training
    }

    fn instance_cost(&self, program: &Program, config: &ConfigAssignment, instance: usize, seed: u64) -> Result<f64, String> {
        self.ratio(program, config, instance, instance_seed(seed, instance)).map(|r| -r)
    }

    fn evaluate_full(&self, program: &Program, config: &ConfigAssignment, seed: u64) -> Result<Evaluation, String> {
        let ratios = (0..self.instances.len())
            .into_par_iter()
            .map(|i| self.ratio(program, config, i, instance_seed(seed, i)))
            .collect::<Result<Vec<_>, _>>()?;
        let fitness = mean(&ratios);
        Ok(Evaluation { fitness, fitness_std: population_std(&ratios), raw: 1.0 - fitness, artifacts: Vec::new() })
    }
}

pub struct BbobBenchmark {
    pub runner: SandboxRunner,
    pub suite: Suite,
    /// Function evaluations per optimizer run, also the AOCC horizon.
    pub run_budget: usize,
    pub training: Vec<usize>,
    slots: Vec<RunSlot>,
}

impl BbobBenchmark {
    pub fn new(runner: SandboxRunner, suite: Suite, run_budget: usize) -> Self {
        let slots = suite.slots();
        let training = (0..slots.len()).collect();
        Self { runner, suite, run_budget, training, slots }
    }

    pub fn slots(&self) -> &[RunSlot] {
        &self.slots
    }

    /// Runs the candidate once on a slot. The slot seed seeds the candidate.
    pub fn run_slot(&self, program: &Program, config: &ConfigAssignment, slot: &RunSlot) -> Result<Trajectory, String> {
        let mut func = self.suite.function(slot).ok_or_else(|| format!("slot {} is not in the suite", slot.file_stem()))?.clone();
        let mut session = self.runner.open(Role::Optimize, program, config, slot.seed).map_err(|e| e.traceback())?;
        let task = OptimizeTask {
            budget: self.run_budget as u64,
            dim: self.suite.dim,
            lb: bbob::LOWER_BOUND,
            ub: bbob::UPPER_BOUND,
            f_opt: func.f_opt,
        };
        let outcome = session
            .drive_optimize(&task, &mut |x| func.evaluate(x).unwrap_or(f64::NAN))
            .map_err(|e| e.traceback())?;
        if outcome.termination == Termination::Failed {
            return Err(outcome.failure.map_or_else(|| "optimizer failed".to_string(), |e| e.traceback()));
        }
        if outcome.trajectory.is_empty() {
            return Err("optimizer finished without evaluating the function".into());
        }
        Ok(Trajectory { best_precision: outcome.trajectory })
    }

    fn slot_aocc(&self, program: &Program, config: &ConfigAssignment, slot: &RunSlot) -> Result<(f64, Trajectory), String> {
        let traj = self.run_slot(program, config, slot)?;
        let score = bbob::aocc(&traj, self.run_budget).map_err(|e| e.to_string())?;
        Ok((score, traj))
    }
}

impl Benchmark for BbobBenchmark {
    fn problem(&self) -> Problem {
        Problem::Bbob
    }

    fn reserved_params(&self) -> &'static [&'static str] {
        &["budget", "dim"]
    }

    fn instance_count(&self) -> usize {
        self.slots.len()
    }

    fn training_instances(&self) -> &[usize] {
        &self.training
    }

    fn instance_cost(&self, program: &Program, config: &ConfigAssignment, instance: usize, _seed: u64) -> Result<f64, String> {
        self.slot_aocc(program, config, &self.slots[instance]).map(|(a, _)| -a)
    }

    fn evaluate_full(&self, program: &Program, config: &ConfigAssignment, _seed: u64) -> Result<Evaluation, String> {
        let runs: Vec<_> = self.slots.par_iter().map(|slot| (slot, self.slot_aocc(program, config, slot))).collect();
        let mut cells = BTreeMap::new();
        let mut artifacts = Vec::new();
        let mut first_error = None;
        for (slot, run) in runs {
            match run {
                Ok((score, traj)) => {
                    artifacts.push(Artifact { path: format!("{}.csv", slot.file_stem()), contents: traj.to_csv() });
                    cells.insert(*slot, Ok(score));
                }
                Err(e) => {
                    first_error.get_or_insert(e.clone());
                    cells.insert(*slot, Err(e));
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        let fitness = bbob::aggregate_aocc(&cells, &self.suite).map_err(|e| e.to_string())?;
        Ok(Evaluation { fitness, fitness_std: bbob::seed_std(&cells, &self.suite), raw: fitness, artifacts })
    }
}

pub struct TspBenchmark {
    pub runner: SandboxRunner,
    /// Every instance must carry `optimum_length`.
    pub instances: Vec<TspInstance>,
    pub training: Vec<usize>,
    pub iterations: usize,
    pub wall_limit: Option<Duration>,
    /// Whether `optimum_length` values are exact optima.
    pub exact_reference: bool,
}

impl TspBenchmark {
    pub fn new(runner: SandboxRunner, instances: Vec<TspInstance>, iterations: usize, exact_reference: bool) -> Self {
        let training = (0..instances.len()).collect();
        Self { runner, instances, training, iterations, wall_limit: None, exact_reference }
    }

    fn solve(&self, program: &Program, config: &ConfigAssignment, instance: usize, seed: u64) -> Result<TspResult, String> {
        let inst = &self.instances[instance];
        let optimum = inst.optimum_length.ok_or_else(|| format!("instance {} has no reference length", inst.name))?;
        let started = Instant::now();
        let mut session = self.runner.open(Role::UpdateMatrix, program, config, seed).map_err(|e| e.traceback())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let run = tsp::gls_run(inst, &mut session, self.iterations, self.wall_limit, &mut rng).map_err(|e| match e {
            TspError::Updater(s) => s.traceback(),
            other => other.to_string(),
        })?;
        Ok(TspResult {
            instance: inst.name.clone(),
            gap: tsp::gap_percent(run.best_length, optimum),
            tour: run.best_tour,
            length: run.best_length,
            gap_kind: if self.exact_reference { "optimal" } else { "reference" }.into(),
            time_s: started.elapsed().as_secs_f64(),
        })
    }
}

impl Benchmark for TspBenchmark {
    fn problem(&self) -> Problem {
        Problem::Tsp
    }

    fn instance_count(&self) -> usize {
        self.instances.len()
    }

    fn training_instances(&self) -> &[usize] {
        &self.training
    }

    fn instance_cost(&self, program: &Program, config: &ConfigAssignment, instance: usize, seed: u64) -> Result<f64, String> {
        self.solve(program, config, instance, instance_seed(seed, instance)).map(|r| r.gap)
    }

    fn evaluate_full(&self, program: &Program, config: &ConfigAssignment, seed: u64) -> Result<Evaluation, String> {
        let results = (0..self.instances.len())
            .into_par_iter()
            .map(|i| self.solve(program, config, i, instance_seed(seed, i)))
            .collect::<Result<Vec<_>, _>>()?;
        let gaps: Vec<f64> = results.iter().map(|r| r.gap).collect();
        let mean_gap = mean(&gaps);
        let artifacts = results
            .iter()
            .map(|r| Artifact {
                path: format!("{}.json", r.instance),
                contents: serde_json::to_string_pretty(r).expect("result serializes"),
            })
            .collect();
        Ok(Evaluation { fitness: -mean_gap, fitness_std: population_std(&gaps), raw: mean_gap, artifacts })
    }
}
