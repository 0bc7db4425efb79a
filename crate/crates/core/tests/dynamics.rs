use mavic_core::envs::{build_env, ChainConfig, ChainSwitch};
use mavic_core::instructions::{
    augment_observation, corrected_reward, step_instruction, ActiveInstruction, ArrivalProcess, NULL_CLASS,
};
use mavic_core::model::EnvModel;
use mavic_core::{seeded_rng, with_env};
use proptest::prelude::*;
use rand::Rng;
use serde_json::Value;

fn no_gate(_: &str) -> bool {
    true
}

#[test]
fn arrival_frequency_matches_bernoulli() {
    let registry = ChainSwitch::new(ChainConfig::default()).unwrap().registry();
    let process = ArrivalProcess::new(&registry, 0.1, None).unwrap();
    let mut rng = seeded_rng(11);
    let null = ActiveInstruction::null();
    let n = 100_000;
    let arrivals = (0..n)
        .filter(|_| step_instruction(&null, &process, &no_gate, &mut rng).unwrap().transitioned)
        .count();
    let freq = arrivals as f64 / n as f64;
    assert!((freq - 0.1).abs() <= 0.01, "{freq}");
}

#[test]
fn active_durations_are_geometric_with_the_configured_mean() {
    let built = build_env("overcooked", &Value::Null).unwrap();
    let process = ArrivalProcess::new(&built.registry, 1.0, None).unwrap();
    let mut rng = seeded_rng(5);
    for class in &process.classes {
        let active = ActiveInstruction::new(class.class_id, class.phrases[0].clone());
        let activations = 10_000;
        let mut total = 0usize;
        for _ in 0..activations {
            let mut steps = 1;
            while !step_instruction(&active, &process, &no_gate, &mut rng).unwrap().transitioned {
                steps += 1;
            }
            total += steps;
        }
        let mean = total as f64 / activations as f64;
        let target = class.mean_duration as f64;
        assert!((mean - target).abs() <= 0.05 * target, "class {}: {mean}", class.class_id);
    }
}

#[test]
fn phrases_are_sampled_uniformly_within_a_class() {
    let registry = ChainSwitch::new(ChainConfig::default()).unwrap().registry();
    let process = ArrivalProcess::new(&registry, 1.0, None).unwrap();
    let mut rng = seeded_rng(2);
    let mut counts = std::collections::HashMap::new();
    for _ in 0..30_000 {
        let s = step_instruction(&ActiveInstruction::null(), &process, &no_gate, &mut rng).unwrap();
        *counts.entry(s.phrase).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 3);
    for c in counts.values() {
        assert!((*c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015);
    }
}

#[test]
fn augmented_observation_dimensions() {
    let obs = vec![0.5; 12];
    let emb = vec![1.0; 16];
    assert_eq!(augment_observation(&obs, &emb, 16).unwrap().len(), 28);
    assert!(augment_observation(&obs, &emb, 8).is_err());
}

proptest! {
    #[test]
    fn null_class_reward_is_the_base_reward(env_index in 0usize..4, seed in any::<u64>(), steps in 0usize..40) {
        let name = mavic_core::envs::ENV_NAMES[env_index];
        let built = build_env(name, &Value::Null).unwrap();
        with_env!(&built.env, env => {
            let mut rng = seeded_rng(seed);
            let mut s = env.initial_state(&mut rng);
            for _ in 0..steps {
                if env.is_terminal(&s) {
                    break;
                }
                let joint: Vec<usize> = (0..env.agent_count())
                    .map(|a| rng.random_range(0..env.primitive_action_count(a)))
                    .collect();
                let next = env.transition(&s, &joint, &mut rng);
                let base = env.reward(&s, &joint, &next);
                let r = built.registry.reward_for(env, NULL_CLASS, &s, &joint, &next).unwrap();
                prop_assert_eq!(r.to_bits(), base.to_bits());
                s = next;
            }
        });
    }

    #[test]
    fn correction_identity_when_the_class_is_unchanged(
        rbar in -1e3f64..1e3, gamma in 0.0f64..=1.0, tau in 1usize..50, a in -1e3f64..1e3, b in -1e3f64..1e3,
    ) {
        prop_assert_eq!(corrected_reward(rbar, gamma, tau, a, b, true).unwrap().to_bits(), rbar.to_bits());
    }

    #[test]
    fn correction_is_antisymmetric_in_the_values(
        rbar in -1e3f64..1e3, gamma in 0.0f64..=1.0, tau in 1usize..50, a in -1e3f64..1e3, b in -1e3f64..1e3,
    ) {
        let up = corrected_reward(rbar, gamma, tau, a, b, false).unwrap() - rbar;
        let down = corrected_reward(rbar, gamma, tau, b, a, false).unwrap() - rbar;
        prop_assert!((up + down).abs() <= 1e-9 * (1.0 + up.abs()));
    }
}

#[test]
fn corrected_reward_rejects_bad_inputs() {
    assert!(corrected_reward(1.0, 0.9, 2, f64::NAN, 1.0, false).is_err());
    assert!(corrected_reward(1.0, 0.9, 0, 1.0, 1.0, false).is_err());
    assert!(corrected_reward(1.0, 1.5, 1, 1.0, 1.0, false).is_err());
    assert_eq!(corrected_reward(3.0, 0.9, 4, 2.5, 2.5, false).unwrap(), 3.0);
}
