use std::time::Instant;

use mavic_core::envs::{ChainConfig, ChainSwitch};
use mavic_solver::operators::{backup, evaluate_policy, greedy_policy, sup_distance};
use mavic_solver::{
    from_chain, random_instance, value_iteration, verify_decoupling, Operator, TabularAugmentedMDP, ViOptions,
};
use proptest::prelude::*;

/// Per-class optimal values computed straight from the dense tensor: sum the
/// row over next classes to get the class-`c` dynamics, then iterate.
fn oracle(mdp: &TabularAugmentedMDP, c: usize) -> Vec<f64> {
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    loop {
        let mut next = vec![f64::NEG_INFINITY; n];
        for s in 0..n {
            for a in 0..mdp.n_actions {
                let row = mdp.row(c * n + s, a);
                let mut q = 0.0;
                for s2 in 0..n {
                    let p: f64 = (0..mdp.n_classes).map(|c2| row[c2 * n + s2]).sum();
                    q += p * (mdp.reward(c, s, a, s2) + mdp.gamma * v[s2]);
                }
                next[s] = next[s].max(q);
            }
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-13 {
            return v;
        }
    }
}

fn chain_mdp(beta: f64) -> TabularAugmentedMDP {
    let chain = ChainSwitch::new(ChainConfig::default()).unwrap();
    from_chain(&chain, &chain.registry(), beta).unwrap()
}

fn tight() -> ViOptions {
    ViOptions {
        tol: 1e-12,
        ..Default::default()
    }
}

#[test]
fn chain_corrected_slices_match_the_oracle() {
    let mdp = chain_mdp(0.2);
    let solved = value_iteration(&mdp, Operator::Corrected, &tight());
    assert!(solved.converged);
    for c in 0..mdp.n_classes {
        let dev = sup_distance(solved.table.slice(c), &oracle(&mdp, c));
        assert!(dev <= 1e-6, "class {c}: {dev}");
    }
    let report = verify_decoupling(&mdp, 1e-6).unwrap();
    assert!(report.lemma1_max_dev <= 1e-6);
    assert!(report.theorem1_pass);
}

#[test]
fn naive_slices_differ_from_the_oracle_on_the_chain() {
    let mdp = chain_mdp(0.5);
    let solved = value_iteration(&mdp, Operator::Naive, &tight());
    assert!(sup_distance(solved.table.slice(0), &oracle(&mdp, 0)) > 0.1);
}

#[test]
fn twenty_random_instances_decouple() {
    let clock = Instant::now();
    for seed in 0..20 {
        let inst = random_instance(seed, 0.9).unwrap();
        let mdp = &inst.mdp;
        assert!(mdp.n_states <= 8 && mdp.n_classes <= 3);
        let report = verify_decoupling(mdp, 1e-6).unwrap();
        assert!(report.passed(1e-6), "seed {seed}: {report:?}");
        for c in 0..mdp.n_classes {
            let dev = sup_distance(&report.per_class_details[c].corrected, &oracle(mdp, c));
            assert!(dev <= 1e-6, "seed {seed} class {c}: {dev}");
        }
    }
    assert!(clock.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn verification_report_serializes_with_the_documented_keys() {
    let inst = random_instance(3, 0.9).unwrap();
    let report = verify_decoupling(&inst.mdp, 1e-6).unwrap().summary(Some(3));
    let json = serde_json::to_value(&report).unwrap();
    let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["instance_seed", "iterations", "lemma1_max_dev", "theorem1_pass"]);
}

#[test]
fn zero_arrival_makes_both_operators_identical() {
    let inst = random_instance(8, 0.9).unwrap();
    let mut ct = vec![vec![0.0; inst.mdp.n_classes]; inst.mdp.n_classes];
    ct[0][0] = 1.0;
    for (c, row) in ct.iter_mut().enumerate().skip(1) {
        row[0] = 0.25;
        row[c] = 0.75;
    }
    let mdp = inst.mdp.with_class_transition(&ct).unwrap();
    let v: Vec<f64> = (0..mdp.n_aug()).map(|x| (x as f64 * 0.37).sin()).collect();
    let naive = backup(&mdp, Operator::Naive, &v);
    let corrected = backup(&mdp, Operator::Corrected, &v);
    for s in 0..mdp.n_states {
        assert_eq!(naive[s].to_bits(), corrected[s].to_bits());
    }
    let report = verify_decoupling(&mdp, 1e-6).unwrap();
    let naive_fixed = value_iteration(&mdp, Operator::Naive, &tight());
    assert!(sup_distance(naive_fixed.table.slice(0), &report.per_class_details[0].oracle) <= 1e-8);
}

#[test]
fn discount_zero_gives_the_best_immediate_reward() {
    let inst = random_instance(4, 0.0).unwrap();
    let mdp = &inst.mdp;
    for op in [Operator::Naive, Operator::Corrected] {
        let v = value_iteration(mdp, op, &tight()).table.values;
        for x in 0..mdp.n_aug() {
            let (s, c) = mdp.split(x);
            let best = (0..mdp.n_actions)
                .map(|a| {
                    mdp.row(x, a)
                        .iter()
                        .enumerate()
                        .map(|(x2, p)| p * mdp.reward(c, s, a, mdp.split(x2).0))
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v[x] - best).abs() < 1e-12);
        }
    }
}

#[test]
fn single_class_operator_is_the_textbook_backup() {
    let base = vec![
        vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]],
        vec![vec![1.0, 0.0, 0.0], vec![0.2, 0.3, 0.5]],
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
    ];
    let rewards = vec![vec![
        vec![vec![1.0, 0.0, 2.0], vec![0.0, 0.0, -1.0]],
        vec![vec![0.5, 0.0, 0.0], vec![1.0, 2.0, 3.0]],
        vec![vec![0.0, 4.0, 0.0], vec![0.0, 0.0, 0.0]],
    ]];
    let mdp = TabularAugmentedMDP::from_factored(&base, &[vec![1.0]], &rewards, 0.8).unwrap();
    let v = vec![1.0, -2.0, 0.5];
    let expected: Vec<f64> = (0..3)
        .map(|s| {
            (0..2)
                .map(|a| (0..3).map(|s2| base[s][a][s2] * (rewards[0][s][a][s2] + 0.8 * v[s2])).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    for op in [Operator::Naive, Operator::Corrected, Operator::DynamicReward] {
        assert!(sup_distance(&backup(&mdp, op, &v), &expected) < 1e-15);
    }
}

#[test]
fn zero_rewards_converge_after_one_sweep() {
    let base = vec![vec![vec![0.3, 0.7]; 2]; 2];
    let ct = vec![vec![0.6, 0.4], vec![0.5, 0.5]];
    let rewards = vec![vec![vec![vec![0.0; 2]; 2]; 2]; 2];
    let mdp = TabularAugmentedMDP::from_factored(&base, &ct, &rewards, 0.9).unwrap();
    for op in [Operator::Naive, Operator::Corrected] {
        let out = value_iteration(&mdp, op, &ViOptions::default());
        assert_eq!(out.iterations, 1);
        assert!(out.table.values.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn chain_converges_within_two_thousand_sweeps() {
    let mdp = chain_mdp(0.3);
    for op in [Operator::Naive, Operator::Corrected] {
        let out = value_iteration(&mdp, op, &ViOptions::default());
        assert!(out.converged && out.iterations <= 2000, "{op:?}: {}", out.iterations);
    }
}

#[test]
fn finite_horizon_runs_exactly_h_sweeps() {
    let mdp = chain_mdp(0.3);
    for h in [1, 7, 30] {
        let out = value_iteration(
            &mdp,
            Operator::Corrected,
            &ViOptions {
                horizon: Some(h),
                ..Default::default()
            },
        );
        assert_eq!(out.iterations, h);
        assert_eq!(out.residuals.len(), h);
    }
}

#[test]
fn non_convergence_is_reported() {
    let mdp = chain_mdp(0.3);
    let out = value_iteration(
        &mdp,
        Operator::Naive,
        &ViOptions {
            tol: 1e-14,
            max_iters: 3,
            horizon: None,
        },
    );
    assert!(!out.converged);
    assert_eq!(out.iterations, 3);
    assert!(out.residual > 0.0);
}

/// Ratios are only meaningful while the residual is well above the rounding
/// noise of the values themselves.
fn ratio_floor(v: &[f64]) -> f64 {
    1e-6 * v.iter().fold(1.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn residuals_contract_at_rate_gamma() {
    for seed in 0..20 {
        let inst = random_instance(seed, 0.9).unwrap();
        let naive = value_iteration(&inst.mdp, Operator::Naive, &tight());
        let ratio = naive.max_residual_ratio(ratio_floor(&naive.table.values));
        assert!(ratio <= 0.9 + 1e-9, "seed {seed}: naive residual ratio {ratio}");
        let corrected = value_iteration(&inst.mdp, Operator::Corrected, &tight());
        assert!(corrected.converged, "seed {seed}: corrected operator did not converge");
        let ratio = corrected.max_residual_ratio(ratio_floor(&corrected.table.values));
        assert!(ratio <= 0.9 + 1e-9, "seed {seed}: corrected residual ratio {ratio}");
    }
}

#[test]
fn greedy_corrected_policy_evaluates_to_the_fixed_point() {
    let inst = random_instance(12, 0.9).unwrap();
    let solved = value_iteration(&inst.mdp, Operator::Corrected, &tight());
    let policy = greedy_policy(&inst.mdp, Operator::Corrected, &solved.table.values, 0.0);
    let exact = evaluate_policy(&inst.mdp, Operator::Corrected, &policy).unwrap();
    assert!(sup_distance(&exact, &solved.table.values) < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The dynamic-reward form and the modified backup agree at every iterate.
    #[test]
    fn dynamic_reward_backup_matches_the_corrected_backup(seed in 0u64..10_000, steps in 1usize..30) {
        let inst = random_instance(seed, 0.9).unwrap();
        let mdp = &inst.mdp;
        let mut v = vec![0.0; mdp.n_aug()];
        for _ in 0..steps {
            let a = backup(mdp, Operator::Corrected, &v);
            let b = backup(mdp, Operator::DynamicReward, &v);
            prop_assert!(sup_distance(&a, &b) <= 1e-12);
            v = a;
        }
    }

    #[test]
    fn random_instances_are_stochastic_and_factor(seed in any::<u64>()) {
        let inst = random_instance(seed, 0.9).unwrap();
        let mdp = &inst.mdp;
        for x in 0..mdp.n_aug() {
            for a in 0..mdp.n_actions {
                prop_assert!((mdp.row(x, a).iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            }
        }
        prop_assert!(mdp.factorization_error() <= 1e-12);
        prop_assert!((0.05..=0.5).contains(&inst.beta));
    }
}
