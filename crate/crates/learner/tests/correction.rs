use std::collections::BTreeMap;

use mavic_core::envs::build_env;
use mavic_core::instructions::{corrected_reward, InstructionRegistry};
use mavic_core::with_env;
use mavic_learner::buffer::MacroTransition;
use mavic_learner::update::{compute_target, EmbeddingCache, TargetOptions};
use mavic_learner::{apply_correction, segment_return, AdvantageForm, BootstrapTarget, EncoderSpec, Mode, Policy};
use mavic_learner::{Encoder, PolicyShape};
use proptest::prelude::*;
use serde_json::Value;

const AVOID: &str = "avoid the flagged cell";

fn chain() -> (PolicyShape, InstructionRegistry) {
    let built = build_env("chain", &Value::Null).unwrap();
    let shape = with_env!(&built.env, env => PolicyShape::of(env, 1, true));
    (shape, built.registry)
}

/// Linear critic reading a two-dimensional one-hot phrase code:
/// `V(h, null) = v_null`, `V(h, avoid) = v_avoid` for every history.
fn critic_policy(v_null: f64, v_avoid: f64) -> Policy {
    let (shape, registry) = chain();
    let vectors = BTreeMap::from([(String::new(), vec![1.0, 0.0]), (AVOID.to_string(), vec![0.0, 1.0])]);
    let encoder = Encoder::new(EncoderSpec::External { vectors, fallback: None }, &registry).unwrap();
    let mut policy = Policy::new(shape.clone(), encoder, &[], 0);
    let h = shape.history_dim(0);
    let critic = &mut policy.nets[0].critic.params;
    critic.iter_mut().for_each(|p| *p = 0.0);
    critic[h] = v_null;
    critic[h + 1] = v_avoid;
    policy
}

fn transition(reward: f64, duration: usize, from: &str, to: &str) -> MacroTransition {
    let class = |p: &str| if p.is_empty() { 0 } else { 1 };
    MacroTransition {
        agent: 0,
        history: vec![0.0; 9],
        history_next: vec![0.0; 9],
        mask: vec![true; 3],
        macro_id: 2,
        joint_macros: vec![2],
        class: class(from),
        class_next: class(to),
        phrase: from.to_string(),
        phrase_next: to.to_string(),
        reward,
        duration,
        terminal: false,
        interrupted: from != to,
    }
}

#[test]
fn corrected_reward_worked_example() {
    let r = corrected_reward(1.0, 0.9, 2, 5.0, 3.0, false).unwrap();
    assert!((r - 2.62).abs() <= 1e-12, "{r}");
}

#[test]
fn apply_correction_worked_example() {
    // Transition from the null class into avoid: V(h', c) = 5, V(h', c') = 3.
    let policy = critic_policy(5.0, 3.0);
    let batch = vec![transition(1.0, 2, "", AVOID)];
    let out = apply_correction(&batch, &policy, Mode::Mavic, 0.9).unwrap();
    assert!((out.rewards[0] - 2.62).abs() <= 1e-12, "{}", out.rewards[0]);
    assert_eq!(out.quarantined, vec![false]);
}

#[test]
fn segment_return_worked_examples() {
    let same = segment_return(2.0, 0.9, 1, 10.0, 10.0, true, false);
    assert!((same - 11.0).abs() <= 1e-12);
    let changed = segment_return(2.0, 0.9, 1, 10.0, 4.0, false, false);
    assert!((changed - 7.4).abs() <= 1e-12);
    assert_eq!(segment_return(2.0, 0.9, 1, 10.0, 4.0, false, true), 2.0);
    assert_eq!(segment_return(-3.5, 0.9, 4, 10.0, 10.0, true, true), -3.5);
}

#[test]
fn unchanged_class_leaves_rewards_bit_identical() {
    let policy = critic_policy(7.3, -2.1);
    let batch: Vec<_> = [0.1, -4.25, 1e-9, 123.456]
        .iter()
        .enumerate()
        .map(|(i, &r)| transition(r, i + 1, if i % 2 == 0 { "" } else { AVOID }, if i % 2 == 0 { "" } else { AVOID }))
        .collect();
    let out = apply_correction(&batch, &policy, Mode::Mavic, 0.95).unwrap();
    for (t, r) in batch.iter().zip(&out.rewards) {
        assert_eq!(t.reward.to_bits(), r.to_bits());
    }
}

#[test]
fn baselines_never_correct() {
    let policy = critic_policy(5.0, 3.0);
    let batch = vec![transition(1.0, 2, "", AVOID), transition(0.5, 3, AVOID, "")];
    for mode in [Mode::Naive, Mode::Switch, Mode::Vanilla] {
        let out = apply_correction(&batch, &policy, mode, 0.9).unwrap();
        assert_eq!(out.rewards, vec![1.0, 0.5], "{mode:?}");
    }
}

#[test]
fn non_finite_critic_is_quarantined() {
    let policy = critic_policy(f64::NAN, 3.0);
    let batch = vec![transition(1.0, 2, "", AVOID), transition(1.0, 2, AVOID, AVOID)];
    let out = apply_correction(&batch, &policy, Mode::Mavic, 0.9).unwrap();
    assert_eq!(out.quarantined, vec![true, false]);
    assert_eq!(out.rewards, vec![1.0, 1.0]);
    let options = TargetOptions {
        gamma: 0.9,
        bootstrap: BootstrapTarget::ContinuationValue,
        advantage: AdvantageForm::FromSegmentReturn,
    };
    let mut cache = EmbeddingCache::default();
    assert!(compute_target(&batch[0], &policy, &policy, Mode::Mavic, &options, &mut cache)
        .unwrap()
        .is_none());
}

#[test]
fn default_target_bootstraps_from_the_outgoing_class() {
    // r_corr + g^t V(h', c') = r + g^t V(h', c): the dynamic reward
    // followed by an ordinary bootstrap.
    let policy = critic_policy(5.0, 3.0);
    let t = transition(1.0, 2, "", AVOID);
    let mut cache = EmbeddingCache::default();
    let options = TargetOptions {
        gamma: 0.9,
        bootstrap: BootstrapTarget::ContinuationValue,
        advantage: AdvantageForm::FromSegmentReturn,
    };
    let mavic = compute_target(&t, &policy, &policy, Mode::Mavic, &options, &mut cache).unwrap().unwrap();
    assert!((mavic.corrected_reward - 2.62).abs() <= 1e-12);
    assert!((mavic.target - (1.0 + 0.81 * 5.0)).abs() <= 1e-12);
    assert!((mavic.advantage - (mavic.target - 5.0)).abs() <= 1e-12);
    let naive = compute_target(&t, &policy, &policy, Mode::Naive, &options, &mut cache).unwrap().unwrap();
    assert!((naive.target - (1.0 + 0.81 * 3.0)).abs() <= 1e-12);

    let literal = TargetOptions {
        bootstrap: BootstrapTarget::DoubleDifference,
        advantage: AdvantageForm::IncomingBootstrap,
        ..options
    };
    let dd = compute_target(&t, &policy, &policy, Mode::Mavic, &literal, &mut cache).unwrap().unwrap();
    assert!((dd.target - (2.62 + 0.81 * 2.0)).abs() <= 1e-12);
    assert!((dd.advantage - (2.62 + 0.81 * 3.0 - 5.0)).abs() <= 1e-12);
}

#[test]
fn terminal_transitions_do_not_bootstrap() {
    let policy = critic_policy(5.0, 3.0);
    let mut t = transition(4.0, 1, "", "");
    t.terminal = true;
    let options = TargetOptions {
        gamma: 0.9,
        bootstrap: BootstrapTarget::ContinuationValue,
        advantage: AdvantageForm::FromSegmentReturn,
    };
    let mut cache = EmbeddingCache::default();
    let target = compute_target(&t, &policy, &policy, Mode::Mavic, &options, &mut cache).unwrap().unwrap();
    assert_eq!(target.target, 4.0);
}

proptest! {
    #[test]
    fn class_constant_critic_makes_correction_neutral(
        v in -50.0f64..50.0,
        rewards in prop::collection::vec(-10.0f64..10.0, 1..12),
        gamma in 0.0f64..=1.0,
    ) {
        let policy = critic_policy(v, v);
        let batch: Vec<_> = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| match i % 3 {
                0 => transition(r, 1 + i % 4, "", AVOID),
                1 => transition(r, 1 + i % 4, AVOID, ""),
                _ => transition(r, 1 + i % 4, "", ""),
            })
            .collect();
        let mavic = apply_correction(&batch, &policy, Mode::Mavic, gamma).unwrap();
        let naive = apply_correction(&batch, &policy, Mode::Naive, gamma).unwrap();
        for (a, b) in mavic.rewards.iter().zip(&naive.rewards) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn correction_matches_independent_formula(
        r in -10.0f64..10.0,
        tau in 1usize..20,
        gamma in 0.0f64..=1.0,
        v_null in -20.0f64..20.0,
        v_avoid in -20.0f64..20.0,
    ) {
        let policy = critic_policy(v_null, v_avoid);
        let batch = vec![transition(r, tau, "", AVOID), transition(r, tau, AVOID, "")];
        let out = apply_correction(&batch, &policy, Mode::Mavic, gamma).unwrap();
        let d = gamma.powi(tau as i32);
        prop_assert!((out.rewards[0] - (r + d * (v_null - v_avoid))).abs() <= 1e-9);
        prop_assert!((out.rewards[1] - (r + d * (v_avoid - v_null))).abs() <= 1e-9);
    }
}
