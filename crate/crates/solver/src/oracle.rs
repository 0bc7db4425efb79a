use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::TabularAugmentedMDP;
use crate::operators::{evaluate_base_policy, greedy_policy, value_iteration, Operator, ViOptions};

/// Value iteration on the instruction-specific MDP `M_c`, in which class `c`
/// is in force forever. Returns the values and the number of sweeps.
pub fn solve_class(mdp: &TabularAugmentedMDP, c: usize, tol: f64, max_iters: usize) -> (Vec<f64>, usize) {
    let t = mdp.marginal_base(c);
    let r = mdp.class_rewards(c);
    let mut v = vec![0.0; mdp.n_states];
    for k in 1..=max_iters {
        let next: Vec<f64> = (0..mdp.n_states)
            .map(|s| {
                (0..mdp.n_actions)
                    .map(|a| (0..mdp.n_states).map(|s2| t[s][a][s2] * (r[s][a][s2] + mdp.gamma * v[s2])).sum())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual <= tol {
            return (v, k);
        }
    }
    (v, max_iters)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDetail {
    pub class: usize,
    pub oracle: Vec<f64>,
    pub corrected: Vec<f64>,
    /// Value of the corrected greedy policy's class-`c` slice in `M_c`.
    pub greedy: Vec<f64>,
    pub max_dev: f64,
    /// `max_s V*_c(s) - V^pi_c(s)`.
    pub optimality_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    pub lemma1_max_dev: f64,
    pub theorem1_pass: bool,
    pub max_optimality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub per_class_details: Vec<ClassDetail>,
}

/// Machine-readable summary of one verified instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub instance_seed: Option<u64>,
    pub lemma1_max_dev: f64,
    pub theorem1_pass: bool,
    pub iterations: usize,
}

impl DecouplingReport {
    pub fn summary(&self, instance_seed: Option<u64>) -> VerificationReport {
        VerificationReport {
            instance_seed,
            lemma1_max_dev: self.lemma1_max_dev,
            theorem1_pass: self.theorem1_pass,
            iterations: self.iterations,
        }
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.converged && self.lemma1_max_dev <= tol && self.theorem1_pass
    }
}

/// Solves every `M_c` on its own, solves the augmented problem with the
/// corrected operator, and compares: per-class value deviation and whether
/// the corrected greedy policy is `tol`-optimal in each `M_c`.
pub fn verify_decoupling(mdp: &TabularAugmentedMDP, tol: f64) -> Result<DecouplingReport> {
    let inner_tol = (tol * 1e-4).max(1e-13);
    let options = ViOptions {
        tol: inner_tol,
        max_iters: 200_000,
        horizon: None,
    };
    let solved = value_iteration(mdp, Operator::Corrected, &options);
    let policy = greedy_policy(mdp, Operator::Corrected, &solved.table.values, 0.0);
    let mut details = Vec::with_capacity(mdp.n_classes);
    for c in 0..mdp.n_classes {
        let (oracle, _) = solve_class(mdp, c, inner_tol, options.max_iters);
        let corrected = solved.table.slice(c).to_vec();
        let max_dev = corrected.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let slice_policy: Vec<usize> = (0..mdp.n_states).map(|s| policy[mdp.index(s, c)]).collect();
        let greedy = evaluate_base_policy(&mdp.marginal_base(c), &mdp.class_rewards(c), mdp.gamma, &slice_policy)?;
        let optimality_gap = oracle.iter().zip(&greedy).map(|(o, g)| o - g).fold(0.0, f64::max);
        details.push(ClassDetail {
            class: c,
            oracle,
            corrected,
            greedy,
            max_dev,
            optimality_gap,
        });
    }
    let lemma1_max_dev = details.iter().map(|d| d.max_dev).fold(0.0, f64::max);
    let max_optimality_gap = details.iter().map(|d| d.optimality_gap).fold(0.0, f64::max);
    Ok(DecouplingReport {
        lemma1_max_dev,
        theorem1_pass: max_optimality_gap <= tol,
        max_optimality_gap,
        iterations: solved.iterations,
        converged: solved.converged,
        per_class_details: details,
    })
}
