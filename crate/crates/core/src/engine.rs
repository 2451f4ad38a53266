//! The (1+1) evolution loop with per-candidate hyper-parameter tuning.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bench::{Benchmark, Problem, Program};
use crate::configspace::{parse_space, serialize_assignment, ConfigAssignment, ConfigSpace};
use crate::hpo::{HpoError, TrialRecord, Tuner};
use crate::llm::{parse_response, LlmError, LlmGateway, LlmRequest};
use crate::prompts::{build_feedback_prompt, task_prompt, SelectedAlgorithm};
use crate::store::events::{
    ErrorEvent, EvaluationEvent, HpoIncumbentEvent, HpoTrialEvent, LlmQueryEvent, LlmResponseEvent, ParseResultEvent,
    SelectionEvent,
};
use crate::store::{replay, EventKind, RunStore, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub problem: Problem,
    /// LLM queries, counting the initial generation.
    pub llm_budget: u64,
    /// Instance evaluations available to each tuning session.
    pub hpo_budget: usize,
    pub seed: u64,
    pub model: String,
    pub temperature: f64,
    pub system_message: String,
    /// Fitness recorded for candidates that fail. Zero for benchmarks whose
    /// fitness is bounded below by zero.
    pub error_fitness: f64,
    /// Benchmark settings recorded alongside the run.
    pub metadata: Value,
}

impl EvolutionConfig {
    pub fn new(problem: Problem, llm_budget: u64, hpo_budget: usize, seed: u64) -> Self {
        Self {
            problem,
            llm_budget,
            hpo_budget,
            seed,
            model: "gpt-4o-2024-05-13".into(),
            temperature: 1.0,
            system_message: String::new(),
            error_fitness: default_error_fitness(problem),
            metadata: Value::Null,
        }
    }

    pub fn validate(&self, bench: &dyn Benchmark, tuner: &dyn Tuner) -> Result<(), EngineError> {
        let fail = |m: String| Err(EngineError::InvalidConfig(m));
        if self.llm_budget < 1 {
            return fail("llm budget must be at least 1".into());
        }
        if self.hpo_budget < 1 {
            return fail("hpo budget must be at least 1".into());
        }
        if tuner.budget() != self.hpo_budget {
            return fail(format!("tuner budget {} differs from hpo budget {}", tuner.budget(), self.hpo_budget));
        }
        if bench.problem() != self.problem {
            return fail(format!("benchmark is {} but the run is configured for {}", bench.problem(), self.problem));
        }
        let training = bench.training_instances();
        if training.is_empty() {
            return fail("no training instances".into());
        }
        if let Some(bad) = training.iter().find(|&&i| i >= bench.instance_count()) {
            return fail(format!("training instance {bad} is outside the full set of {}", bench.instance_count()));
        }
        Ok(())
    }

    fn snapshot(&self, bench: &dyn Benchmark) -> Value {
        json!({
            "config": self,
            "full_set_size": bench.instance_count(),
            "training_instances": bench.training_instances(),
        })
    }
}

/// TSP fitness is a negated gap, so a failure must rank below any real gap.
pub fn default_error_fitness(problem: Problem) -> f64 {
    match problem {
        Problem::Tsp => -1e6,
        Problem::Binpack | Problem::Bbob => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub name: String,
    /// Exactly as parsed from the response.
    pub code: String,
    pub space_text: String,
    pub space: ConfigSpace,
    pub tuned: Option<ConfigAssignment>,
    pub fitness: f64,
    pub fitness_std: f64,
    /// The benchmark's reporting value, absent for failures.
    pub raw: Option<f64>,
    pub error: Option<String>,
    /// 1-based index of the LLM query that produced the candidate.
    pub llm_query_index: u64,
    pub tuning_evals: u64,
    pub evaluation_evals: u64,
}

impl Candidate {
    pub fn instance_evals(&self) -> u64 {
        self.tuning_evals + self.evaluation_evals
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// LLM queries answered so far.
    pub t: u64,
    pub best: Option<Candidate>,
    pub history: Vec<(String, f64)>,
    pub instance_evals_total: u64,
    pub full_set_size: u64,
}

impl RunState {
    pub fn full_benchmark_evals(&self) -> Ratio<u64> {
        Ratio::new(self.instance_evals_total, self.full_set_size.max(1))
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("tuner rejected its configuration: {0}")]
    Tuner(HpoError),
    #[error("cannot resume: {0}")]
    ResumeMismatch(String),
}

/// Elitist replacement: the challenger wins ties.
pub fn select<'a>(best: &'a Candidate, challenger: &'a Candidate) -> &'a Candidate {
    if challenger.fitness >= best.fitness {
        challenger
    } else {
        best
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, candidate: u64, stream: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(candidate)) ^ stream)
}

struct Develop<'a> {
    cfg: &'a EvolutionConfig,
    tuner: &'a dyn Tuner,
    bench: &'a dyn Benchmark,
    store: &'a mut RunStore,
}

impl Develop<'_> {
    fn error(&mut self, candidate_id: u64, stage: &str, message: &str) -> Result<(), StoreError> {
        let ev = ErrorEvent { candidate_id: Some(candidate_id), stage: stage.into(), message: message.into() };
        self.store.append(EventKind::Error, &ev).map(|_| ())
    }

    /// Parses, tunes and evaluates one response into a candidate.
    fn candidate(&mut self, id: u64, parent_id: Option<u64>, query_index: u64, response: &str) -> Result<Candidate, EngineError> {
        let mut cand = Candidate {
            id,
            parent_id,
            name: String::new(),
            code: String::new(),
            space_text: String::new(),
            space: ConfigSpace::default(),
            tuned: None,
            fitness: self.cfg.error_fitness,
            fitness_std: 0.0,
            raw: None,
            error: None,
            llm_query_index: query_index,
            tuning_evals: 0,
            evaluation_evals: 0,
        };
        let parsed = parse_response(response).map_err(|e| e.to_string()).and_then(|p| {
            let space = parse_space(&p.space_text).map_err(|e| format!("configuration space: {e}"))?;
            let reserved = space.reserved_collisions(self.bench.reserved_params());
            if let Some(v) = reserved.first() {
                return Err(format!("configuration space: {v}"));
            }
            Ok((p, space))
        });
        let parse_event = match &parsed {
            Ok((p, _)) => ParseResultEvent { candidate_id: id, name: Some(p.name.clone()), error: None },
            Err(e) => ParseResultEvent { candidate_id: id, name: None, error: Some(e.clone()) },
        };
        self.store.append(EventKind::ParseResult, &parse_event)?;
        let (p, space) = match parsed {
            Ok(v) => v,
            Err(e) => {
                self.error(id, "parse", &e)?;
                cand.error = Some(e);
                return Ok(cand);
            }
        };
        cand.name = p.name;
        cand.code = p.code;
        cand.space_text = p.space_text;
        cand.space = space;

        let program = Program { id, code: cand.code.clone(), space: cand.space.clone() };
        let tuning_seed = derive_seed(self.cfg.seed, id, 0);
        let bench = self.bench;
        let mut objective = |a: &ConfigAssignment, instance: usize| bench.instance_cost(&program, a, instance, tuning_seed);
        let tuned = self.tuner.tune(&program.space, &mut objective, bench.training_instances(), tuning_seed);
        let (trials, outcome): (Vec<TrialRecord>, _) = match tuned {
            Ok(o) => (o.trials, Ok(o.incumbent)),
            Err(HpoError::AllTrialsFailed { first_error, trials }) => (trials, Err(first_error)),
            Err(e @ HpoError::InvalidConfig(_)) => return Err(EngineError::Tuner(e)),
        };
        cand.tuning_evals = trials.len() as u64;
        for trial in trials {
            self.store.append(EventKind::HpoTrial, &HpoTrialEvent { candidate_id: id, trial })?;
        }
        let incumbent = match outcome {
            Ok(inc) => inc,
            Err(first_error) => {
                self.error(id, "tuning", &first_error)?;
                cand.error = Some(first_error);
                return Ok(cand);
            }
        };
        self.store.append(
            EventKind::HpoIncumbent,
            &HpoIncumbentEvent {
                candidate_id: id,
                assignment: incumbent.assignment.clone(),
                mean_cost: incumbent.mean_cost,
                instances_seen: incumbent.instances_seen,
                evaluations: cand.tuning_evals,
            },
        )?;
        cand.tuned = Some(incumbent.assignment.clone());

        cand.evaluation_evals = bench.instance_count() as u64;
        match bench.evaluate_full(&program, &incumbent.assignment, derive_seed(self.cfg.seed, id, 1)) {
            Ok(ev) if ev.fitness.is_finite() => {
                let dir = match bench.problem() {
                    Problem::Bbob => std::path::PathBuf::from("trajectories").join(id.to_string()),
                    _ => std::path::PathBuf::from("candidates").join(id.to_string()).join("results"),
                };
                self.store.save_artifacts(&dir, &ev.artifacts)?;
                cand.fitness = ev.fitness;
                cand.fitness_std = ev.fitness_std;
                cand.raw = Some(ev.raw);
            }
            Ok(ev) => {
                let msg = format!("non-finite fitness {}", ev.fitness);
                self.error(id, "evaluation", &msg)?;
                cand.error = Some(msg);
            }
            Err(tb) => {
                self.error(id, "evaluation", &tb)?;
                cand.error = Some(tb);
            }
        }
        Ok(cand)
    }
}

/// Runs the loop to completion, resuming from whatever the store already
/// holds. Returns the best candidate and the final state.
pub fn run_evolution(
    cfg: &EvolutionConfig,
    llm: &mut dyn LlmGateway,
    tuner: &dyn Tuner,
    bench: &dyn Benchmark,
    store: &mut RunStore,
) -> Result<(Candidate, RunState), EngineError> {
    cfg.validate(bench, tuner)?;
    let snapshot = cfg.snapshot(bench);
    let events = store.events()?;
    let mut state = if events.is_empty() {
        store.append(EventKind::ConfigSnapshot, &snapshot)?;
        RunState { full_set_size: bench.instance_count() as u64, ..RunState::default() }
    } else {
        let r = replay(&events)?;
        if r.config.as_ref() != Some(&snapshot) {
            return Err(EngineError::ResumeMismatch("the run directory was created with a different configuration".into()));
        }
        store.truncate_events(r.complete_events)?;
        if let Some(best) = &r.state.best {
            store.save_best(best)?;
        }
        llm.resume_after(r.state.t as usize);
        RunState { full_set_size: bench.instance_count() as u64, ..r.state }
    };

    let task = task_prompt(cfg.problem);
    while state.t < cfg.llm_budget {
        let id = state.t;
        let (prompt_kind, prompt, parent_id) = match &state.best {
            None => ("task", task.to_string(), None),
            Some(best) => {
                let hyper = best.tuned.as_ref().map(|a| serialize_assignment(a, &best.space));
                let selected = SelectedAlgorithm {
                    name: &best.name,
                    code: &best.code,
                    score: best.fitness,
                    space_text: &best.space_text,
                    hyper_parameters: hyper.as_deref(),
                    error: best.error.as_deref(),
                };
                ("feedback", build_feedback_prompt(task, &state.history, &selected), Some(best.id))
            }
        };
        let query_index = state.t + 1;
        store.append(
            EventKind::LlmQuery,
            &LlmQueryEvent { query_index, candidate_id: id, prompt_kind: prompt_kind.into(), prompt: prompt.clone() },
        )?;
        let req = LlmRequest {
            system_message: cfg.system_message.clone(),
            user_message: prompt,
            temperature: cfg.temperature,
            model_name: cfg.model.clone(),
        };
        let response = match llm.query(&req) {
            Ok(r) => r,
            Err(e) => {
                let ev = ErrorEvent { candidate_id: Some(id), stage: "llm".into(), message: e.to_string() };
                store.append(EventKind::Error, &ev)?;
                return Err(e.into());
            }
        };
        state.t = query_index;
        store.append(EventKind::LlmResponse, &LlmResponseEvent { query_index, candidate_id: id, text: response.clone() })?;

        let cand = Develop { cfg, tuner, bench, store }.candidate(id, parent_id, query_index, &response)?;
        state.instance_evals_total += cand.instance_evals();
        store.append(EventKind::Evaluation, &EvaluationEvent { candidate: cand.clone() })?;
        store.save_candidate(&cand)?;

        let accepted = state.best.as_ref().is_none_or(|b| select(b, &cand).id == cand.id);
        state.history.push((display_name(&cand), cand.fitness));
        if accepted {
            state.best = Some(cand.clone());
        }
        let best = state.best.as_ref().expect("a candidate was just evaluated");
        let r = state.full_benchmark_evals();
        store.append(
            EventKind::Selection,
            &SelectionEvent {
                candidate_id: cand.id,
                accepted,
                best_id: best.id,
                best_fitness: best.fitness,
                best_raw: best.raw,
                llm_queries: state.t,
                instance_evals_total: state.instance_evals_total,
                full_set_size: state.full_set_size,
                full_benchmark_evals: r.to_string(),
            },
        )?;
        if accepted {
            store.save_best(best)?;
        }
    }
    let best = state.best.clone().ok_or_else(|| EngineError::InvalidConfig("no candidate was generated".into()))?;
    Ok((best, state))
}

pub(crate) fn display_name(c: &Candidate) -> String {
    if c.name.is_empty() {
        format!("candidate-{} (unparsed)", c.id)
    } else {
        c.name.clone()
    }
}
