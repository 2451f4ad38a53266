mod common;

use std::fs;

use evohpo::bench::binpack::{self, BinPackInstance};
use evohpo::bench::{Benchmark, BinPackBenchmark, Problem};
use evohpo::engine::{run_evolution, EngineError, EvolutionConfig};
use evohpo::hpo::{RacingTuner, Strategy, TunerConfig};
use evohpo::llm::ScriptedSource;
use evohpo::store::{export_convergence, replay, Clock, EventKind, RunStore, StoreError};

use common::*;

fn tuner(budget: usize) -> RacingTuner {
    RacingTuner::new(TunerConfig { budget, strategy: Strategy::Random, ..TunerConfig::default() })
}

fn cfg(llm_budget: u64, hpo_budget: usize) -> EvolutionConfig {
    EvolutionConfig::new(Problem::Binpack, llm_budget, hpo_budget, 1)
}

fn elitism_script() -> Vec<String> {
    vec![scorer_response("FirstFit", "first_fit"), scorer_response("WorstFit", "worst_fit"), scorer_response("BestFit", "best_fit")]
}

#[test]
fn broken_responses_score_zero_and_the_valid_one_wins() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new([BROKEN, BROKEN, BROKEN].map(String::from).into_iter().chain([scorer_response("BestFit", "best_fit")]));
    let bench = elitism_bench();
    let (best, state) = run_evolution(&cfg(4, 6), &mut llm, &tuner(6), &bench, &mut store).unwrap();
    assert_eq!(best.name, "BestFit");
    assert_eq!(best.id, 3);
    assert_eq!(state.t, 4);
    let r = replay(&store.events().unwrap()).unwrap();
    for c in &r.candidates[..3] {
        assert_eq!(c.fitness, 0.0);
        assert!(c.error.as_deref().is_some_and(|e| e.contains("space")), "{:?}", c.error);
        assert_eq!(c.instance_evals(), 0);
    }
    assert_eq!(r.candidates[3].parent_id, Some(2));
}

#[test]
fn single_query_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new([scorer_response("BestFit", "best_fit"), scorer_response("Unused", "first_fit")]);
    let (best, state) = run_evolution(&cfg(1, 4), &mut llm, &tuner(4), &elitism_bench(), &mut store).unwrap();
    assert_eq!(llm.cursor(), 1);
    assert_eq!(state.t, 1);
    assert_eq!(best.name, "BestFit");
    let queries = store.events().unwrap().iter().filter(|e| e.kind == EventKind::LlmQuery).count();
    assert_eq!(queries, 1);
}

#[test]
fn fixture_fitnesses_match_direct_simulation() {
    let set = elitism_instances();
    let ff = binpack::fitness(&set, &mut binpack::first_fit()).unwrap();
    let wf = binpack::fitness(&set, &mut binpack::worst_fit()).unwrap();
    let bf = binpack::fitness(&set, &mut binpack::best_fit()).unwrap();
    assert!((ff - 0.8).abs() < 1e-12 && (wf - 0.7).abs() < 1e-12 && (bf - 0.9).abs() < 1e-12);
}

#[test]
fn best_so_far_is_elitist() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new(elitism_script());
    let (best, _) = run_evolution(&cfg(3, 4), &mut llm, &tuner(4), &elitism_bench(), &mut store).unwrap();
    assert_eq!(best.name, "BestFit");
    let r = replay(&store.events().unwrap()).unwrap();
    let fitness: Vec<f64> = r.candidates.iter().map(|c| c.fitness).collect();
    let best_series: Vec<f64> = r.selections.iter().map(|s| s.best_fitness).collect();
    for (got, want) in fitness.iter().zip([0.8, 0.7, 0.9]) {
        assert!((got - want).abs() < 1e-12, "{fitness:?}");
    }
    for (got, want) in best_series.iter().zip([0.8, 0.8, 0.9]) {
        assert!((got - want).abs() < 1e-12, "{best_series:?}");
    }
    let accepted: Vec<bool> = r.selections.iter().map(|s| s.accepted).collect();
    assert_eq!(accepted, [true, false, true]);

    let (by_query, by_evals) = export_convergence(dir.path()).unwrap();
    assert_eq!(by_query.lines().count(), 4);
    assert!(by_query.starts_with("llm_queries,best_fitness,best_raw\n1,"));
    assert!(by_evals.lines().nth(1).unwrap().contains(",7/5,"), "{by_evals}");
}

#[test]
fn instance_evaluations_are_charged_per_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut script = elitism_script();
    script.insert(1, BROKEN.to_string());
    let mut llm = ScriptedSource::new(script);
    let bench = elitism_bench();
    let (_, state) = run_evolution(&cfg(4, 6), &mut llm, &tuner(6), &bench, &mut store).unwrap();
    let parsed = 3;
    assert_eq!(state.instance_evals_total, parsed * (6 + bench.instance_count() as u64));
    let r = replay(&store.events().unwrap()).unwrap();
    assert_eq!(r.state, state);
    let trials = store.events().unwrap().iter().filter(|e| e.kind == EventKind::HpoTrial).count();
    assert_eq!(trials, 18);
}

#[test]
fn tuning_crash_keeps_the_first_traceback() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new([response("Crashy", &["best_fit", "syntax_error"], "{\"alpha\": (0.0, 1.0)}")]);
    let (best, state) = run_evolution(&cfg(1, 40), &mut llm, &tuner(40), &elitism_bench(), &mut store).unwrap();
    assert_eq!(best.fitness, 0.0);
    assert!(best.error.as_deref().unwrap().contains("SyntaxError: invalid syntax"));
    assert!(best.tuned.is_none());
    assert_eq!(state.instance_evals_total, 5);
}

#[test]
fn evaluation_crash_is_reported_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new([response("Raiser", &["raise_on_score"], "{\"alpha\": (0.0, 1.0)}")]);
    let (best, _) = run_evolution(&cfg(1, 4), &mut llm, &tuner(4), &elitism_bench(), &mut store).unwrap();
    assert_eq!(best.fitness, 0.0);
    let e = best.error.unwrap();
    assert!(e.starts_with("Traceback (most recent call last):") && e.ends_with("ZeroDivisionError: division by zero"));
}

#[test]
fn feedback_prompt_carries_the_best_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new(elitism_script());
    run_evolution(&cfg(2, 4), &mut llm, &tuner(4), &elitism_bench(), &mut store).unwrap();
    let events = store.events().unwrap();
    let prompts: Vec<String> = events
        .iter()
        .filter(|e| e.kind == EventKind::LlmQuery)
        .map(|e| e.payload["prompt"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(prompts[0], evohpo::prompts::task_prompt(Problem::Binpack));
    assert!(prompts[1].starts_with(&prompts[0]));
    assert!(prompts[1].contains("- FirstFit: 0.800000"));
    assert!(prompts[1].contains("# native: first_fit\nimport numpy as np"));
    assert!(prompts[1].contains("Optimal hyper-parameters: {\"alpha\": "));
}

#[test]
fn stored_code_round_trips_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new(elitism_script());
    run_evolution(&cfg(3, 4), &mut llm, &tuner(4), &elitism_bench(), &mut store).unwrap();
    let r = replay(&store.events().unwrap()).unwrap();
    for c in &r.candidates {
        let on_disk = fs::read(store.candidate_dir(c.id).join("code.py")).unwrap();
        assert_eq!(on_disk, c.code.as_bytes());
        assert_eq!(store.load_candidate(c.id).unwrap(), *c);
    }
    let best = RunStore::load_best(dir.path()).unwrap();
    assert!(store.candidate_dir(best.candidate_id).exists());
}

#[test]
fn identical_runs_log_identical_bytes() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
        let mut llm = ScriptedSource::new(elitism_script());
        run_evolution(&cfg(3, 6), &mut llm, &tuner(6), &elitism_bench(), &mut store).unwrap();
        fs::read(dir.path().join("events.jsonl")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn resuming_after_a_kill_matches_an_uninterrupted_run() {
    let script = {
        let mut s = elitism_script();
        s.insert(1, BROKEN.to_string());
        s
    };
    let full = tempfile::tempdir().unwrap();
    {
        let mut store = RunStore::open(full.path(), Clock::Logical).unwrap();
        run_evolution(&cfg(4, 4), &mut ScriptedSource::new(script.clone()), &tuner(4), &elitism_bench(), &mut store).unwrap();
    }
    let want_best = fs::read(full.path().join("best.json")).unwrap();
    let want_log = fs::read(full.path().join("events.jsonl")).unwrap();
    let total = want_log.iter().filter(|&&b| b == b'\n').count() as u64;
    for kill_at in 1..total {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
            store.halt_after_events(kill_at);
            let err = run_evolution(&cfg(4, 4), &mut ScriptedSource::new(script.clone()), &tuner(4), &elitism_bench(), &mut store)
                .unwrap_err();
            assert!(matches!(err, EngineError::Store(StoreError::Halted(_))), "{err:?}");
        }
        let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
        run_evolution(&cfg(4, 4), &mut ScriptedSource::new(script.clone()), &tuner(4), &elitism_bench(), &mut store).unwrap();
        assert_eq!(fs::read(dir.path().join("best.json")).unwrap(), want_best, "killed after {kill_at} events");
        assert_eq!(fs::read(dir.path().join("events.jsonl")).unwrap(), want_log, "killed after {kill_at} events");
    }
}

#[test]
fn resume_refuses_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
        run_evolution(&cfg(1, 4), &mut ScriptedSource::new(elitism_script()), &tuner(4), &elitism_bench(), &mut store).unwrap();
    }
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let other = EvolutionConfig { seed: 2, ..cfg(1, 4) };
    let err = run_evolution(&other, &mut ScriptedSource::new(elitism_script()), &tuner(4), &elitism_bench(), &mut store).unwrap_err();
    assert!(matches!(err, EngineError::ResumeMismatch(_)));
}

#[test]
fn exhausted_script_aborts_with_state_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new([scorer_response("BestFit", "best_fit")]);
    let err = run_evolution(&cfg(3, 4), &mut llm, &tuner(4), &elitism_bench(), &mut store).unwrap_err();
    assert!(matches!(err, EngineError::Llm(_)));
    let r = replay(&store.events().unwrap()).unwrap();
    assert_eq!(r.state.t, 1);
    assert_eq!(store.events().unwrap().last().unwrap().kind, EventKind::Error);
    assert!(dir.path().join("best.json").exists());
}

#[test]
fn invalid_configurations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path(), Clock::Logical).unwrap();
    let mut llm = ScriptedSource::new(elitism_script());
    let bench = elitism_bench();
    assert!(matches!(
        run_evolution(&cfg(0, 4), &mut llm, &tuner(4), &bench, &mut store),
        Err(EngineError::InvalidConfig(_))
    ));
    assert!(matches!(
        run_evolution(&cfg(1, 4), &mut llm, &tuner(5), &bench, &mut store),
        Err(EngineError::InvalidConfig(_))
    ));
    let mut outside = BinPackBenchmark::new(runner(), vec![BinPackInstance { capacity: 10, items: vec![1] }]);
    outside.training = vec![3];
    assert!(matches!(
        run_evolution(&cfg(1, 4), &mut llm, &tuner(4), &outside, &mut store),
        Err(EngineError::InvalidConfig(_))
    ));
}
