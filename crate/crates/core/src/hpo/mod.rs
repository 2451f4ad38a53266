//! In-loop hyper-parameter tuning.
//!
//! Configurations race over a seeded, session-wide ordering of the training
//! instances. A challenger starts on `min_instances` of them and doubles its
//! instance count while its mean cost on the shared prefix is no worse than
//! the incumbent's; reaching `max_instances` that way makes it the new
//! incumbent. The tuner minimizes cost and never spends more objective calls
//! than its budget.

mod forest;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::configspace::{sample, ConfigAssignment, ConfigSpace, ParamKind, ParamValue};

pub use forest::{ForestParams, RegressionForest};

pub const DEFAULT_POOL_SIZE: usize = 500;

const LOG_SHIFT: f64 = 1e-3;
const LOCAL_PARENTS: usize = 5;
const LOCAL_SCALES: [f64; 3] = [0.2, 0.05, 0.01];
const LOCAL_PER_SCALE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Surrogate,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Strategy::Random),
            "surrogate" => Ok(Strategy::Surrogate),
            other => Err(format!("unknown tuning strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    /// Objective calls available to one tuning session.
    pub budget: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub strategy: Strategy,
    pub seed: u64,
    /// Random configurations tried before the surrogate takes over.
    /// `None` means `max(5, |params|)`.
    pub initial_design: Option<usize>,
    pub pool_size: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            budget: 40,
            min_instances: 1,
            max_instances: 4,
            strategy: Strategy::Surrogate,
            seed: 0,
            initial_design: None,
            pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

impl TunerConfig {
    pub fn initial_design_for(&self, space: &ConfigSpace) -> usize {
        self.initial_design.unwrap_or_else(|| space.len().max(5))
    }

    fn check(&self, n_training: usize) -> Result<(), HpoError> {
        if n_training == 0 {
            return Err(HpoError::InvalidConfig("no training instances".into()));
        }
        if self.budget == 0 {
            return Err(HpoError::InvalidConfig("budget must be at least 1".into()));
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return Err(HpoError::InvalidConfig(format!(
                "need 1 <= min_instances ({}) <= max_instances ({})",
                self.min_instances, self.max_instances
            )));
        }
        if self.budget < self.min_instances {
            return Err(HpoError::InvalidConfig(format!(
                "budget ({}) is smaller than min_instances ({})",
                self.budget, self.min_instances
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub eval_index: usize,
    /// Index of the configuration within the session, in proposal order.
    pub config_id: usize,
    pub assignment: ConfigAssignment,
    pub instance_id: usize,
    /// Absent exactly when `error` is set.
    pub cost: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub assignment: ConfigAssignment,
    pub mean_cost: f64,
    pub instances_seen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub incumbent: Incumbent,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HpoError {
    #[error("every evaluated configuration failed; first error: {first_error}")]
    AllTrialsFailed { first_error: String, trials: Vec<TrialRecord> },
    #[error("invalid tuner configuration: {0}")]
    InvalidConfig(String),
}

/// Objective called with a configuration and a training-instance id.
/// Returns a cost to minimize or an error traceback.
pub type Objective<'a> = dyn FnMut(&ConfigAssignment, usize) -> Result<f64, String> + 'a;

pub trait Tuner {
    fn tune(
        &self,
        space: &ConfigSpace,
        objective: &mut Objective<'_>,
        training_instances: &[usize],
        seed: u64,
    ) -> Result<TuneOutcome, HpoError>;

    fn budget(&self) -> usize;
}

/// The racing tuner with a pluggable proposal strategy.
#[derive(Debug, Clone, Default)]
pub struct RacingTuner {
    pub config: TunerConfig,
}

impl RacingTuner {
    pub fn new(config: TunerConfig) -> Self {
        Self { config }
    }
}

impl Tuner for RacingTuner {
    fn tune(
        &self,
        space: &ConfigSpace,
        objective: &mut Objective<'_>,
        training_instances: &[usize],
        seed: u64,
    ) -> Result<TuneOutcome, HpoError> {
        let cfg = TunerConfig { seed, ..self.config.clone() };
        tune(space, objective, training_instances, &cfg)
    }

    fn budget(&self) -> usize {
        self.config.budget
    }
}

/// Runs one tuning session. See the module documentation for the race.
pub fn tune(
    space: &ConfigSpace,
    objective: &mut Objective<'_>,
    training_instances: &[usize],
    cfg: &TunerConfig,
) -> Result<TuneOutcome, HpoError> {
    cfg.check(training_instances.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = training_instances.to_vec();
    order.shuffle(&mut rng);
    let mut session = Session {
        objective,
        order,
        budget: cfg.budget,
        configs: Vec::new(),
        trials: Vec::new(),
        incumbent: None,
        first_error: None,
    };

    if space.is_empty() {
        session.configs.push(ConfigRecord::new(ConfigAssignment::new()));
        let n = session.order.len();
        for k in 0..n {
            if session.exhausted() || !session.evaluate(0, k) {
                break;
            }
        }
        if !session.configs[0].errored && !session.configs[0].costs.is_empty() {
            session.incumbent = Some(0);
        }
        return session.finish();
    }

    let target = cfg.max_instances.min(session.order.len());
    let min_instances = cfg.min_instances.min(target);
    let initial_design = cfg.initial_design_for(space);
    while !session.exhausted() {
        if session.incumbent.is_none() && session.configs.len() >= initial_design && session.configs.iter().all(|c| c.errored) {
            break;
        }
        let challenger = if session.configs.len() < initial_design || cfg.strategy == Strategy::Random {
            sample(space, &mut rng)
        } else {
            surrogate_propose(&session.trials, space, &mut rng, initial_design, cfg.pool_size)
        };
        session.configs.push(ConfigRecord::new(challenger));
        let ch = session.configs.len() - 1;
        session.race(ch, min_instances, target);
    }
    session.finish()
}

struct ConfigRecord {
    assignment: ConfigAssignment,
    /// Costs on `order[0..costs.len()]`.
    costs: Vec<f64>,
    errored: bool,
}

impl ConfigRecord {
    fn new(assignment: ConfigAssignment) -> Self {
        Self { assignment, costs: Vec::new(), errored: false }
    }

    fn mean(&self, n: usize) -> f64 {
        self.costs[..n].iter().sum::<f64>() / n as f64
    }
}

struct Session<'o, 'a> {
    objective: &'o mut Objective<'a>,
    order: Vec<usize>,
    budget: usize,
    configs: Vec<ConfigRecord>,
    trials: Vec<TrialRecord>,
    incumbent: Option<usize>,
    first_error: Option<String>,
}

impl Session<'_, '_> {
    fn exhausted(&self) -> bool {
        self.trials.len() >= self.budget
    }

    /// Evaluates config `c` on `order[k]`. Returns false if the trial errored.
    fn evaluate(&mut self, c: usize, k: usize) -> bool {
        let instance_id = self.order[k];
        let assignment = self.configs[c].assignment.clone();
        let result = (self.objective)(&assignment, instance_id).and_then(|cost| {
            if cost.is_finite() {
                Ok(cost)
            } else {
                Err(format!("objective returned non-finite cost {cost}"))
            }
        });
        let (cost, error) = match result {
            Ok(cost) => {
                self.configs[c].costs.push(cost);
                (Some(cost), None)
            }
            Err(e) => {
                self.configs[c].errored = true;
                self.first_error.get_or_insert_with(|| e.clone());
                (None, Some(e))
            }
        };
        self.trials.push(TrialRecord {
            eval_index: self.trials.len(),
            config_id: c,
            assignment,
            instance_id,
            cost,
            error: error.clone(),
        });
        error.is_none()
    }

    /// Extends config `c` to `n` instances. False on error or budget exhaustion.
    fn extend(&mut self, c: usize, n: usize) -> bool {
        while self.configs[c].costs.len() < n {
            if self.exhausted() {
                return false;
            }
            let k = self.configs[c].costs.len();
            if !self.evaluate(c, k) {
                return false;
            }
        }
        true
    }

    fn race(&mut self, ch: usize, min_instances: usize, target: usize) {
        let Some(inc) = self.incumbent else {
            if self.extend(ch, min_instances) {
                self.incumbent = Some(ch);
            }
            return;
        };
        let mut m = min_instances;
        loop {
            if !self.extend(inc, m) {
                if self.configs[inc].errored {
                    self.incumbent = self.fallback();
                    return self.race(ch, min_instances, target);
                }
                return;
            }
            if !self.extend(ch, m) {
                return;
            }
            if self.configs[ch].mean(m) > self.configs[inc].mean(m) {
                return;
            }
            if m >= target {
                self.incumbent = Some(ch);
                return;
            }
            m = (2 * m).min(target);
        }
    }

    /// Best surviving configuration: most instances seen, then lowest mean.
    fn fallback(&self) -> Option<usize> {
        self.configs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.errored && !c.costs.is_empty())
            .min_by(|(_, a), (_, b)| {
                b.costs
                    .len()
                    .cmp(&a.costs.len())
                    .then(a.mean(a.costs.len()).total_cmp(&b.mean(b.costs.len())))
            })
            .map(|(i, _)| i)
    }

    fn finish(self) -> Result<TuneOutcome, HpoError> {
        match self.incumbent {
            Some(i) => {
                let c = &self.configs[i];
                Ok(TuneOutcome {
                    incumbent: Incumbent {
                        assignment: c.assignment.clone(),
                        mean_cost: c.mean(c.costs.len()),
                        instances_seen: c.costs.len(),
                    },
                    trials: self.trials,
                })
            }
            None => Err(HpoError::AllTrialsFailed {
                first_error: self.first_error.unwrap_or_else(|| "budget exhausted before any evaluation".into()),
                trials: self.trials,
            }),
        }
    }
}

/// Maps an assignment to the unit hypercube: ranges min-max scaled,
/// categoricals one-hot.
pub fn encode(assignment: &ConfigAssignment, space: &ConfigSpace) -> Vec<f64> {
    let mut out = Vec::new();
    for p in &space.params {
        let value = assignment.get(&p.name);
        match &p.kind {
            ParamKind::Float { lo, hi } => {
                let v = value.and_then(ParamValue::as_f64).unwrap_or(*lo);
                out.push(if hi > lo { (v - lo) / (hi - lo) } else { 0.0 });
            }
            ParamKind::Int { lo, hi } => {
                let v = value.and_then(ParamValue::as_f64).unwrap_or(*lo as f64);
                out.push(if hi > lo { (v - *lo as f64) / (*hi - *lo) as f64 } else { 0.0 });
            }
            ParamKind::Categorical { choices } => {
                for choice in choices {
                    let hot = matches!(value, Some(ParamValue::Str(s)) if s == choice);
                    out.push(if hot { 1.0 } else { 0.0 });
                }
            }
        }
    }
    out
}

/// Expected improvement of a Gaussian prediction below `best`.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    if sd < 1e-12 {
        return (best - mean).max(0.0);
    }
    let z = (best - mean) / sd;
    let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (best - mean) * cdf + sd * pdf
}

/// Proposes the next configuration by expected improvement under a
/// regression-forest surrogate of mean cost per configuration. The pool holds
/// `pool_size` uniform samples plus one-parameter perturbations of the best
/// configurations at several scales. Falls back to a uniform sample with
/// fewer than `min_configs` completed configurations, identical costs, or no
/// positive improvement anywhere in the pool.
pub fn surrogate_propose<R: Rng + ?Sized>(
    trials: &[TrialRecord],
    space: &ConfigSpace,
    rng: &mut R,
    min_configs: usize,
    pool_size: usize,
) -> ConfigAssignment {
    let mut per_config: BTreeMap<usize, (ConfigAssignment, f64, usize, bool)> = BTreeMap::new();
    for t in trials {
        let entry = per_config.entry(t.config_id).or_insert_with(|| (t.assignment.clone(), 0.0, 0, false));
        match t.cost {
            Some(c) => {
                entry.1 += c;
                entry.2 += 1;
            }
            None => entry.3 = true,
        }
    }
    let mut completed: Vec<(&ConfigAssignment, f64)> = per_config
        .values()
        .filter(|(_, _, n, errored)| !errored && *n > 0)
        .map(|(a, sum, n, _)| (a, sum / *n as f64))
        .collect();
    if completed.is_empty() || completed.len() < min_configs {
        return sample(space, rng);
    }
    let ys: Vec<f64> = completed.iter().map(|(_, y)| *y).collect();
    let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let worst = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if worst - best <= 1e-12 * best.abs().max(1.0) {
        return sample(space, rng);
    }
    let xs: Vec<Vec<f64>> = completed.iter().map(|(a, _)| encode(a, space)).collect();
    let shift = LOG_SHIFT * (worst - best);
    let zs: Vec<f64> = ys.iter().map(|y| (y - best + shift).ln()).collect();
    let z_best = shift.ln();
    let forest = RegressionForest::fit(&xs, &zs, &ForestParams::default(), rng);

    completed.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut pool: Vec<ConfigAssignment> = (0..pool_size.max(1)).map(|_| sample(space, rng)).collect();
    for (a, _) in completed.iter().take(LOCAL_PARENTS) {
        for scale in LOCAL_SCALES {
            pool.extend((0..LOCAL_PER_SCALE).map(|_| neighbour(a, space, scale, rng)));
        }
    }
    let mut best_candidate: Option<(f64, ConfigAssignment)> = None;
    for candidate in pool {
        let (mean, var) = forest.predict(&encode(&candidate, space));
        let ei = expected_improvement(mean, var, z_best);
        if ei.is_finite() && best_candidate.as_ref().is_none_or(|(b, _)| ei > *b) {
            best_candidate = Some((ei, candidate));
        }
    }
    match best_candidate {
        Some((ei, candidate)) if ei > 0.0 => candidate,
        _ => sample(space, rng),
    }
}

/// Copy of `a` with one parameter moved: a Gaussian step of `scale` times
/// the range for numbers, a different choice for categoricals.
fn neighbour<R: Rng + ?Sized>(a: &ConfigAssignment, space: &ConfigSpace, scale: f64, rng: &mut R) -> ConfigAssignment {
    let mut out = a.clone();
    if space.is_empty() {
        return out;
    }
    let p = &space.params[rng.random_range(0..space.len())];
    let step: f64 = rng.sample(StandardNormal);
    let value = match &p.kind {
        ParamKind::Float { lo, hi } => {
            let v = a.get(&p.name).and_then(ParamValue::as_f64).unwrap_or(*lo);
            ParamValue::Float((v + step * scale * (hi - lo)).clamp(*lo, *hi))
        }
        ParamKind::Int { lo, hi } => {
            let v = a.get(&p.name).and_then(ParamValue::as_f64).unwrap_or(*lo as f64);
            let moved = (v + step * scale * (*hi - *lo) as f64).round() as i64;
            ParamValue::Int(moved.clamp(*lo, *hi))
        }
        ParamKind::Categorical { choices } => ParamValue::Str(choices[rng.random_range(0..choices.len())].clone()),
    };
    out.insert(p.name.clone(), value);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::parse_space;

    fn quadratic(a: &ConfigAssignment, _: usize) -> Result<f64, String> {
        let x = a.get("x").and_then(ParamValue::as_f64).unwrap();
        Ok((x - 0.7).powi(2))
    }

    fn cfg(strategy: Strategy, seed: u64) -> TunerConfig {
        TunerConfig { budget: 40, strategy, seed, ..TunerConfig::default() }
    }

    #[test]
    fn empty_space_evaluates_each_instance_once() {
        let mut calls = 0;
        let mut obj = |_: &ConfigAssignment, i: usize| {
            calls += 1;
            Ok(i as f64)
        };
        let out = tune(&ConfigSpace::default(), &mut obj, &[0, 1, 2, 3], &cfg(Strategy::Surrogate, 1)).unwrap();
        assert_eq!(calls, 4);
        assert!(out.incumbent.assignment.is_empty());
        assert_eq!(out.incumbent.instances_seen, 4);
        assert_eq!(out.incumbent.mean_cost, 1.5);
    }

    #[test]
    fn always_failing_objective_aborts_early() {
        let space = parse_space(r#"{"x": (0.0, 1.0)}"#).unwrap();
        let mut calls = 0;
        let mut obj = |_: &ConfigAssignment, _: usize| {
            calls += 1;
            Err::<f64, _>("Traceback: boom".to_string())
        };
        let c = TunerConfig { budget: 100, min_instances: 2, ..cfg(Strategy::Random, 3) };
        let err = tune(&space, &mut obj, &[0, 1, 2, 3], &c).unwrap_err();
        let HpoError::AllTrialsFailed { first_error, trials } = err else { panic!() };
        assert_eq!(first_error, "Traceback: boom");
        assert!(calls <= 2 * 5, "calls {calls}");
        assert_eq!(trials.len(), calls);
    }

    #[test]
    fn single_instance_quadratic_is_recovered() {
        let space = parse_space(r#"{"x": (0.0, 1.0)}"#).unwrap();
        for strategy in [Strategy::Random, Strategy::Surrogate] {
            let out = tune(&space, &mut quadratic, &[0], &cfg(strategy, 7)).unwrap();
            let x = out.incumbent.assignment.get("x").unwrap().as_f64().unwrap();
            assert!((x - 0.7).abs() < 0.1, "{strategy:?}: {x}");
            assert_eq!(out.trials.len(), 40);
        }
    }

    #[test]
    fn crashing_configurations_never_become_incumbent() {
        let space = parse_space(r#"{"x": (0.0, 1.0)}"#).unwrap();
        let mut obj = |a: &ConfigAssignment, i: usize| {
            let x = a.get("x").and_then(ParamValue::as_f64).unwrap();
            if x < 0.5 && i == 2 {
                Err("crash".to_string())
            } else {
                Ok(x)
            }
        };
        let out = tune(&space, &mut obj, &[0, 1, 2, 3], &cfg(Strategy::Random, 5)).unwrap();
        let errored: std::collections::HashSet<usize> =
            out.trials.iter().filter(|t| t.error.is_some()).map(|t| t.config_id).collect();
        let inc = &out.incumbent.assignment;
        assert!(!out.trials.iter().any(|t| errored.contains(&t.config_id) && &t.assignment == inc));
    }

    #[test]
    fn ei_is_zero_without_uncertainty_or_gain() {
        assert_eq!(expected_improvement(1.0, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.3);
        assert!(expected_improvement(0.5, 0.04, 0.5) > 0.0);
    }

    #[test]
    fn surrogate_falls_back_on_degenerate_history() {
        let space = parse_space(r#"{"x": (0.0, 1.0)}"#).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(surrogate_propose(&[], &space, &mut r1, 5, 500), sample(&space, &mut r2));

        let trials: Vec<TrialRecord> = (0..8)
            .map(|i| {
                let mut a = ConfigAssignment::new();
                a.insert("x", ParamValue::Float(i as f64 / 8.0));
                TrialRecord { eval_index: i, config_id: i, assignment: a, instance_id: 0, cost: Some(1.0), error: None }
            })
            .collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(surrogate_propose(&trials, &space, &mut r1, 5, 500), sample(&space, &mut r2));
    }

    #[test]
    fn encoding_scales_and_one_hots() {
        let space = parse_space(r#"{"f": (0.0, 2.0), "i": (0, 4), "c": ["a", "b", "c"]}"#).unwrap();
        let mut a = ConfigAssignment::new();
        a.insert("f", ParamValue::Float(0.5));
        a.insert("i", ParamValue::Int(3));
        a.insert("c", ParamValue::Str("b".into()));
        assert_eq!(encode(&a, &space), vec![0.25, 0.75, 0.0, 1.0, 0.0]);
    }
}
