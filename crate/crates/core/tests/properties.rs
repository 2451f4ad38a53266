use std::cell::Cell;

use proptest::prelude::*;

use evohpo::bench::bbob::{aocc, Trajectory};
use evohpo::bench::binpack::{l2_lower_bound, simulate_online, BinPackInstance, FnScorer};
use evohpo::configspace::{
    parse_assignment, parse_space, sample, serialize_assignment, validate, ConfigSpace, ParamKind, ParamSpec,
};
use evohpo::glicko2::{glicko2_update, GameResult, Glicko2Config, RatingState};
use evohpo::hpo::{tune, Strategy as Proposal, TunerConfig};
use evohpo::llm::{parse_response, ParsedResponse};
use evohpo::store::events::HpoTrialEvent;

fn kind() -> impl Strategy<Value = ParamKind> {
    prop_oneof![
        (-1e6f64..1e6, 0f64..1e6).prop_map(|(lo, w)| ParamKind::Float { lo, hi: lo + w }),
        (any::<i32>(), 0i64..1000).prop_map(|(lo, w)| ParamKind::Int { lo: lo as i64, hi: lo as i64 + w }),
        prop::collection::btree_set("[ -~]{0,6}|\\PC{1,4}|[\\x00-\\x1f\\x7f]{1,3}", 1..5)
            .prop_map(|s| ParamKind::Categorical { choices: s.into_iter().collect() }),
    ]
}

/// Unique names in a random declaration order.
fn space() -> impl Strategy<Value = ConfigSpace> {
    prop::collection::btree_map("[a-z_][a-z0-9_]{0,10}", kind(), 0..6)
        .prop_map(|m| m.into_iter().map(|(name, kind)| ParamSpec { name, kind }).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|params| ConfigSpace { params })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn space_literal_round_trips(s in space()) {
        let text = s.to_literal();
        prop_assert_eq!(parse_space(&text).unwrap(), s);
    }

    #[test]
    fn sampled_assignments_validate_and_round_trip(s in space(), seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = sample(&s, &mut rng);
        prop_assert!(validate(&a, &s).is_empty());
        prop_assert_eq!(parse_assignment(&serialize_assignment(&a, &s)).unwrap(), a);
    }
}

proptest! {
    #[test]
    fn response_parsing_is_idempotent(
        prose in "[A-Za-z ,.]{0,40}",
        name in "[A-Za-z][A-Za-z0-9_]{0,15}",
        code in "[a-z =()+:]{1,30}(\n[a-z =()+:]{0,30}){0,5}",
        s in space(),
        heading in prop_oneof![Just("Space"), Just("Configspace")],
    ) {
        let doc = format!("{prose}\n# Name: {name}\n# Code:\n```python\n{code}\n```\n# {heading}:\n```python\n{}\n```\n", s.to_literal());
        let first = parse_response(&doc).unwrap();
        prop_assert_eq!(&first.name, &name);
        prop_assert_eq!(parse_space(&first.space_text).unwrap(), s);
        let again: ParsedResponse = parse_response(&first.to_document()).unwrap();
        prop_assert_eq!((&again.name, &again.code, &again.space_text), (&first.name, &first.code, &first.space_text));
    }

    #[test]
    fn aocc_is_bounded_and_monotone(
        raw in prop::collection::vec(0f64..1e4, 1..200),
        shrink in prop::collection::vec(0f64..1.0, 200),
        budget in 1usize..300,
    ) {
        let worse = Trajectory::from_precisions(raw.iter().copied());
        let better = Trajectory::from_precisions(raw.iter().zip(&shrink).map(|(v, s)| v * s));
        let (a, b) = (aocc(&worse, budget).unwrap(), aocc(&better, budget).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(b >= a);
    }

    #[test]
    fn glicko_update_ignores_result_order(
        games in prop::collection::vec((1000f64..2000.0, 30f64..350.0, prop_oneof![Just(0.0), Just(0.5), Just(1.0)]), 1..20),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let results: Vec<GameResult> = games
            .iter()
            .map(|&(r, d, s)| GameResult { opponent_rating: r, opponent_deviation: d, score: s })
            .collect();
        let mut shuffled = results.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let cfg = Glicko2Config::default();
        let a = glicko2_update(RatingState::default(), &results, &cfg).unwrap();
        let b = glicko2_update(RatingState::default(), &shuffled, &cfg).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.deviation < RatingState::default().deviation);
    }

    #[test]
    fn tuner_never_exceeds_its_budget(
        s in space(),
        budget in 1usize..60,
        fail_every in 0usize..5,
        strategy in prop_oneof![Just(Proposal::Random), Just(Proposal::Surrogate)],
        n_instances in 1usize..6,
        seed in any::<u64>(),
    ) {
        let calls = Cell::new(0usize);
        let mut objective = |a: &evohpo::configspace::ConfigAssignment, i: usize| {
            calls.set(calls.get() + 1);
            if fail_every > 0 && calls.get().is_multiple_of(fail_every + 1) {
                return Err("Traceback: boom".to_string());
            }
            Ok(a.values.len() as f64 + i as f64)
        };
        let training: Vec<usize> = (0..n_instances).collect();
        let cfg = TunerConfig { budget, strategy, seed, pool_size: 50, ..TunerConfig::default() };
        if let Ok(out) = tune(&s, &mut objective, &training, &cfg) {
            prop_assert!(validate(&out.incumbent.assignment, &s).is_empty());
            prop_assert_eq!(out.trials.len(), calls.get());
        }
        prop_assert!(calls.get() <= budget);
    }

    #[test]
    fn online_packing_respects_capacity_and_bound(
        capacity in 1i64..60,
        raw in prop::collection::vec(1i64..1000, 0..60),
        scores in prop::collection::vec(-1e3f64..1e3, 64),
    ) {
        let items: Vec<i64> = raw.iter().map(|v| 1 + v % capacity).collect();
        let inst = BinPackInstance { capacity, items: items.clone() };
        let mut k = 0usize;
        let mut scorer = FnScorer(|_item: i64, bins: &[i64]| {
            k += 1;
            bins.iter().enumerate().map(|(j, _)| scores[(k + j) % scores.len()]).collect()
        });
        let packing = simulate_online(&inst, &mut scorer).unwrap();
        prop_assert!(packing.remaining.iter().all(|&r| (0..=capacity).contains(&r)));
        let used: i64 = packing.remaining.iter().map(|r| capacity - r).sum();
        prop_assert_eq!(used, items.iter().sum::<i64>());
        prop_assert!(l2_lower_bound(&inst) <= packing.bins_used);
    }

    #[test]
    fn trial_events_round_trip(
        cost in prop::option::of(any::<f64>().prop_filter("finite", |v| v.is_finite())),
        x in any::<f64>().prop_filter("finite", |v| v.is_finite()),
        id in any::<u64>(),
    ) {
        let mut assignment = evohpo::configspace::ConfigAssignment::new();
        assignment.insert("x", evohpo::configspace::ParamValue::Float(x));
        let ev = HpoTrialEvent {
            candidate_id: id,
            trial: evohpo::hpo::TrialRecord {
                eval_index: 3,
                config_id: 1,
                assignment,
                instance_id: 2,
                error: cost.is_none().then(|| "err".to_string()),
                cost,
            },
        };
        let text = serde_json::to_string(&ev).unwrap();
        prop_assert_eq!(serde_json::from_str::<HpoTrialEvent>(&text).unwrap(), ev);
    }
}
