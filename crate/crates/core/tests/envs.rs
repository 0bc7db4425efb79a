use std::collections::HashMap;

use mavic_core::compliance::{compliance_event, Outcome, WindowStatus};
use mavic_core::envs::box_pushing::{BoxState, FORWARD, GO_TO_BIG_BOX, PUSH, STAY, TURN_LEFT, TURN_RIGHT};
use mavic_core::envs::{build_env, conformance, BoxPushing, BoxPushingConfig, ChainConfig, ChainSwitch, EnvKind};
use mavic_core::instructions::{FixedInstruction, InstructionRegistry};
use mavic_core::model::EnvModel;
use mavic_core::rollout::{Rollout, RolloutOptions};
use mavic_core::{seeded_rng, with_env, CoreError};
use serde_json::{json, Value};

#[test]
fn every_environment_conforms() {
    for name in mavic_core::envs::ENV_NAMES {
        let built = build_env(name, &Value::Null).unwrap();
        let report = with_env!(&built.env, e => conformance::check(e, &built.registry, &[0, 1, 2, 3, 4]).unwrap());
        assert!(report.passed(), "{name}: {:#?}", report.failures);
        assert_eq!(report.episodes, 5);
        assert!(report.steps > 0);
    }
}

#[test]
fn chain_defaults_enumerate_twelve_augmented_states() {
    let built = build_env("chain", &json!({})).unwrap();
    let EnvKind::Chain(chain) = &built.env else { panic!() };
    assert_eq!(chain.n_states() * built.registry.len(), 12);
}

#[test]
fn overcooked_grid_is_seven_by_seven() {
    let built = build_env("overcooked", &Value::Null).unwrap();
    let EnvKind::Overcooked(oc) = &built.env else { panic!() };
    assert_eq!(oc.grid_size(), (7, 7));
    let snapshot = oc.render(&oc.initial_state(&mut seeded_rng(0)));
    assert_eq!(snapshot.cells.len(), 7);
    assert!(snapshot.cells.iter().all(|r| r.len() == 7));
    assert_eq!(oc.agent_count(), 3);
}

#[test]
fn unknown_environment_and_keys_are_rejected() {
    assert!(matches!(build_env("atari", &Value::Null), Err(CoreError::UnknownEnv(_))));
    match build_env("chain", &json!({"n_sates": 6, "gama": 0.9, "horizon": 10})) {
        Err(CoreError::UnknownKeys(keys)) => assert_eq!(keys, vec!["gama", "n_sates"]),
        other => panic!("{other:?}"),
    }
    assert!(matches!(build_env("chain", &json!({"n_states": 2})), Err(CoreError::Config(_))));
}

fn big_box_plan(env: &BoxPushing) -> (f64, f64, Vec<String>) {
    let registry = env.registry();
    let options = RolloutOptions {
        seed: 0,
        ..Default::default()
    };
    let mut rollout = Rollout::new(env, &registry, Box::new(FixedInstruction), &options).unwrap();
    let mut selector = |_agent, _h: &_, _c: &_, mask: &[bool], _rng: &mut _| {
        Ok(if mask[PUSH] { PUSH } else { GO_TO_BIG_BOX })
    };
    let summary = rollout.run_episode(&mut selector).unwrap();
    let events = rollout.trace().iter().flat_map(|r| r.events.clone()).collect();
    (summary.base_return, summary.base_discounted, events)
}

#[test]
fn box_pushing_big_box_outcome_is_reachable_with_push() {
    let built = build_env("box_pushing", &Value::Null).unwrap();
    let EnvKind::BoxPushing(bp) = &built.env else { panic!() };
    assert!(bp.macro_actions(0).iter().any(|m| m.name == "Push"));
    let (ret, _, events) = big_box_plan(bp);
    assert!(events.iter().any(|e| e == "big_box_goal"), "{events:?}");
    assert!(ret > 290.0, "{ret}");
}

/// Exhaustive search over joint primitive plans (the grid is deterministic).
fn best_return(env: &BoxPushing, s: &BoxState, t: usize, memo: &mut HashMap<(BoxState, usize), f64>) -> f64 {
    if t == env.horizon() || env.is_terminal(s) {
        return 0.0;
    }
    if let Some(v) = memo.get(&(s.clone(), t)) {
        return *v;
    }
    let mut rng = seeded_rng(0);
    let actions = [FORWARD, TURN_LEFT, TURN_RIGHT, STAY];
    let mut best = f64::NEG_INFINITY;
    for a in actions {
        for b in actions {
            let joint = [a, b];
            let next = env.transition(s, &joint, &mut rng);
            let v = env.reward(s, &joint, &next) + env.discount() * best_return(env, &next, t + 1, memo);
            best = best.max(v);
        }
    }
    memo.insert((s.clone(), t), best);
    best
}

#[test]
fn box_pushing_optimum_is_the_big_box_trajectory() {
    let env = BoxPushing::new(BoxPushingConfig {
        horizon: 12,
        ..Default::default()
    })
    .unwrap();
    let start = env.initial_state(&mut seeded_rng(0));
    let optimum = best_return(&env, &start, 0, &mut HashMap::new());
    let (_, discounted, events) = big_box_plan(&env);
    assert!(events.iter().any(|e| e == "big_box_goal"));
    assert!(optimum > 200.0, "optimum {optimum} does not come from the big box");
    assert!((optimum - discounted).abs() < 1e-9, "optimum {optimum}, macro plan {discounted}");
}

#[test]
fn chain_tensors_match_the_simulator() {
    let env = ChainSwitch::new(ChainConfig {
        slip: 0.2,
        ..Default::default()
    })
    .unwrap();
    let registry = env.registry();
    let mut rng = seeded_rng(3);
    let trials = 20_000;
    for s in 0..env.n_states() {
        for a in 0..2 {
            let probs = env.transition_probs(s, a);
            assert!((probs.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
            let mut counts = vec![0usize; env.n_states()];
            for _ in 0..trials {
                let next = env.transition(&s, &[a], &mut rng);
                counts[next] += 1;
                for c in 0..registry.len() {
                    let r = registry.reward_for(&env, c, &s, &[a], &next).unwrap();
                    assert!(r.is_finite());
                }
            }
            for (next, p) in probs {
                let freq = counts[next] as f64 / trials as f64;
                assert!((freq - p).abs() < 0.015, "s {s} a {a} -> {next}: {freq} vs {p}");
            }
        }
    }
}

#[test]
fn compliance_examples() {
    let box_registry = build_env("box_pushing", &Value::Null).unwrap().registry;
    let no_push = box_registry.classify("don't push the box").unwrap();
    let quiet = vec![Vec::new(); 20];
    assert_eq!(
        compliance_event(&box_registry, no_push, &quiet, WindowStatus::Expired).unwrap(),
        Outcome::Followed
    );

    let wh: InstructionRegistry = build_env("warehouse", &Value::Null).unwrap().registry;
    let tool2 = wh.classify("get me tool 2").unwrap();
    let mut window = vec![Vec::new(); 6];
    window.push(vec!["deliver_tool_2".to_string()]);
    assert_eq!(
        compliance_event(&wh, tool2, &window, WindowStatus::Active).unwrap(),
        Outcome::Followed
    );

    let oc = build_env("overcooked", &Value::Null).unwrap().registry;
    let left = oc.classify("Don't use the left cutting board").unwrap();
    let window = vec![vec![], vec![], vec!["use_left_board".to_string()]];
    assert_eq!(
        compliance_event(&oc, left, &window, WindowStatus::Active).unwrap(),
        Outcome::Violated
    );
}

#[test]
fn overcooked_restriction_penalty_is_fifty() {
    let built = build_env("overcooked", &Value::Null).unwrap();
    let EnvKind::Overcooked(oc) = &built.env else { panic!() };
    let class = built.registry.classify("don't use the left cutting board").unwrap();
    let mut s = oc.initial_state(&mut seeded_rng(0));
    s.cooks[0] = mavic_core::envs::overcooked::Station::CuttingBoardLeft.access();
    let joint = [mavic_core::envs::overcooked::INTERACT, 4, 4];
    let next = oc.transition(&s, &joint, &mut seeded_rng(0));
    let base = oc.reward(&s, &joint, &next);
    let r = built.registry.reward_for(oc, class, &s, &joint, &next).unwrap();
    assert_eq!(r, base - 50.0);

    let bp = build_env("box_pushing", &Value::Null).unwrap();
    let EnvKind::BoxPushing(env) = &bp.env else { panic!() };
    let class = bp.registry.classify("don't push the box").unwrap();
    let s = env.initial_state(&mut seeded_rng(0));
    let joint = [STAY, TURN_LEFT];
    let next = env.transition(&s, &joint, &mut seeded_rng(0));
    assert_eq!(
        bp.registry.reward_for(env, class, &s, &joint, &next).unwrap(),
        env.reward(&s, &joint, &next)
    );
}
