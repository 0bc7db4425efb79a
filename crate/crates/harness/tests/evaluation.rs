use std::collections::BTreeMap;

use mavic_core::compliance::{IssuedInstruction, Outcome};
use mavic_core::envs::{build_env, ChainConfig, ChainSwitch};
use mavic_core::instructions::InstructionRegistry;
use mavic_core::with_env;
use mavic_learner::collect::{overall_compliance, tally, trace_episode};
use mavic_learner::nn::Mlp;
use mavic_learner::policy::AgentNets;
use mavic_learner::{eval_base, eval_compliance, EncoderSpec, InstructionPlan, Policy, PolicyShape};
use mavic_solver::{from_chain, greedy_policy, value_iteration, Operator, ViOptions};
use proptest::prelude::*;

fn chain(slip: f64) -> (ChainSwitch, InstructionRegistry) {
    let c = ChainSwitch::new(ChainConfig {
        slip,
        ..Default::default()
    })
    .unwrap();
    let r = c.registry();
    (c, r)
}

/// Linear actor over `[one-hot cell, last-macro one-hot, instruction flag]`:
/// `Right` by default, `Left` (stay) under the avoid instruction except on
/// the flagged cell itself.
fn hand_policy(chain: &ChainSwitch, registry: &InstructionRegistry) -> Policy {
    let shape = PolicyShape::of(chain, 1, true);
    let input = shape.history_dim(0) + 1;
    let outputs = 3;
    let mut actor = Mlp {
        sizes: vec![input, outputs],
        params: vec![0.0; input * outputs + outputs],
    };
    let w = |o: usize, i: usize| o * input + i;
    let b = |o: usize| input * outputs + o;
    actor.params[b(1)] = 10.0;
    actor.params[b(2)] = -100.0;
    actor.params[w(1, chain.flagged())] = 100.0;
    actor.params[w(1, input - 1)] = -20.0;
    let critic = Mlp {
        sizes: vec![input, 1],
        params: vec![0.0; input + 1],
    };
    let vectors: BTreeMap<String, Vec<f64>> = registry.class(1).unwrap().phrases.iter().map(|p| (p.clone(), vec![1.0])).collect();
    let spec = EncoderSpec::External {
        vectors,
        fallback: Some(vec![0.0]),
    };
    Policy::from_parts(shape, vec![AgentNets { actor, critic }], spec, registry).unwrap()
}

fn optimum(chain: &ChainSwitch, registry: &InstructionRegistry) -> f64 {
    let mdp = from_chain(chain, registry, 0.0).unwrap();
    let solved = value_iteration(&mdp, Operator::Corrected, &ViOptions::default());
    solved.table.get(chain.start(), 0)
}

#[test]
fn hand_policy_matches_the_per_class_exact_optimum() {
    let (c, r) = chain(0.0);
    let policy = hand_policy(&c, &r);
    let mdp = from_chain(&c, &r, 0.3).unwrap();
    let v = value_iteration(&mdp, Operator::Corrected, &ViOptions::default()).table.values;
    let greedy = greedy_policy(&mdp, Operator::Corrected, &v, 1e-9);
    for class in 0..2 {
        let phrase = r.class(class).unwrap().phrases[0].clone();
        let e = policy.encoder.embed(&phrase).unwrap();
        for s in 1..c.n_states() - 1 {
            let mut history = vec![0.0; policy.shape.history_dim(0)];
            history[s] = 1.0;
            let probs = policy.probabilities(0, &policy.input(0, &history, &e), &[true, true, true]);
            let chosen = mavic_learner::policy::argmax(&probs);
            assert_eq!(chosen, greedy[mdp.index(s, class)], "cell {s} class {class}");
        }
    }
}

#[test]
fn optimal_policy_reaches_the_exact_optimum() {
    let (c, r) = chain(0.2);
    let policy = hand_policy(&c, &r);
    let stats = eval_base(&c, &r, &policy, 1000, 17, true).unwrap();
    let target = optimum(&c, &r);
    let rel = (stats.discounted_mean - target).abs() / target;
    assert!(rel <= 0.01, "{} vs {target}", stats.discounted_mean);
    assert!(stats.std > 0.0 || stats.discounted_std > 0.0);
}

#[test]
fn deterministic_runs_have_zero_spread() {
    let (c, r) = chain(0.0);
    let policy = hand_policy(&c, &r);
    let stats = eval_base(&c, &r, &policy, 20, 0, true).unwrap();
    assert_eq!(stats.std, 0.0);
    assert_eq!(stats.discounted_std, 0.0);
    assert_eq!(stats.mean, 10.0);
    assert!((stats.discounted_mean - 10.0 * 0.95f64.powi(3)).abs() < 1e-12);
}

#[test]
fn empty_evaluations_are_rejected() {
    let (c, r) = chain(0.0);
    let policy = hand_policy(&c, &r);
    assert!(eval_base(&c, &r, &policy, 0, 0, true).is_err());
    assert!(eval_compliance(&c, &r, &policy, 0.5, None, 0, 0, true).is_err());
}

#[test]
fn policy_for_another_env_is_rejected() {
    let (c, r) = chain(0.0);
    let policy = hand_policy(&c, &r);
    let bp = build_env("box_pushing", &serde_json::Value::Null).unwrap();
    let err = with_env!(&bp.env, env => eval_base(env, &bp.registry, &policy, 3, 0, true));
    assert!(err.is_err());
}

#[test]
fn base_evaluation_never_issues_instructions() {
    let (c, r) = chain(0.2);
    let policy = hand_policy(&c, &r);
    let plan = InstructionPlan::Arrivals {
        beta: 0.0,
        weights: None,
    };
    for seed in 0..50 {
        let out = trace_episode(&c, &r, &policy, &plan, seed, false).unwrap();
        assert!(out.trace.iter().all(|s| s.active_instruction.class_id == 0));
        assert!(out.summary.instructions.is_empty());
    }
    let live = eval_compliance(&c, &r, &policy, 0.0, None, 50, 0, false).unwrap();
    assert_eq!(live.compliance, None);
    assert!(live.records.is_empty());
}

#[test]
fn always_comply_policy_scores_one() {
    for slip in [0.0, 0.2] {
        let (c, r) = chain(slip);
        let policy = hand_policy(&c, &r);
        for seed in [0, 5, 99] {
            let stats = eval_compliance(&c, &r, &policy, 0.5, None, 200, seed, true).unwrap();
            assert!(stats.records.iter().map(|x| x.issued).sum::<usize>() > 0);
            assert_eq!(stats.compliance, Some(1.0), "slip {slip} seed {seed}");
        }
    }
}

#[test]
fn uninstructed_policy_violates() {
    let (c, r) = chain(0.0);
    let mut policy = hand_policy(&c, &r);
    let input = policy.nets[0].actor.sizes[0];
    // Drop the instruction weight: the policy now ignores the instruction.
    policy.nets[0].actor.params[input + input - 1] = 0.0;
    let stats = eval_compliance(&c, &r, &policy, 0.5, None, 200, 0, true).unwrap();
    assert!(stats.compliance.unwrap() < 1.0);
}

fn issued(outcome: Outcome) -> IssuedInstruction {
    IssuedInstruction {
        class_id: 1,
        phrase: "avoid the flagged cell".into(),
        issued_at: 0,
        active_steps: 1,
        outcome,
    }
}

#[test]
fn ratio_of_followed_to_issued() {
    let mut list = vec![issued(Outcome::Followed); 6];
    list.push(issued(Outcome::Violated));
    list.push(issued(Outcome::Pending));
    let records = tally(&list);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].issued, 8);
    assert_eq!(overall_compliance(&records), Some(0.75));
    assert_eq!(overall_compliance(&[]), None);
}

proptest! {
    #[test]
    fn tallies_partition_the_issued_count(outcomes in prop::collection::vec((0usize..3, 1usize..4), 0..40)) {
        let list: Vec<IssuedInstruction> = outcomes
            .iter()
            .map(|(o, class)| IssuedInstruction {
                class_id: *class,
                outcome: [Outcome::Followed, Outcome::Violated, Outcome::Pending][*o],
                ..issued(Outcome::Followed)
            })
            .collect();
        let records = tally(&list);
        prop_assert_eq!(records.iter().map(|r| r.issued).sum::<usize>(), list.len());
        for r in &records {
            prop_assert_eq!(r.followed + r.violated + r.pending, r.issued);
            let rate = r.rate().unwrap();
            prop_assert!((0.0..=1.0).contains(&rate));
        }
        if let Some(c) = overall_compliance(&records) {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}
