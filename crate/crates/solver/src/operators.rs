use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::mdp::TabularAugmentedMDP;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// Successor term `V(s', c')`: values leak across instruction changes.
    Naive,
    /// Successor term `V(s', c)`.
    Corrected,
    /// Naive backup of the dynamic reward
    /// `R_c + gamma (V(s', c) - V(s', c'))` with `V` frozen at the iterate.
    /// Same operator as [`Operator::Corrected`], computed another way.
    DynamicReward,
}

impl Operator {
    pub fn name(self) -> &'static str {
        match self {
            Operator::Naive => "naive",
            Operator::Corrected => "corrected",
            Operator::DynamicReward => "dynamic_reward",
        }
    }
}

/// Values (and optionally a greedy policy) per augmented state, class-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub n_states: usize,
    pub n_classes: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<usize>>,
}

impl ValueTable {
    pub fn zeros(mdp: &TabularAugmentedMDP) -> Self {
        Self {
            n_states: mdp.n_states,
            n_classes: mdp.n_classes,
            values: vec![0.0; mdp.n_aug()],
            policy: None,
        }
    }

    pub fn get(&self, s: usize, c: usize) -> f64 {
        self.values[c * self.n_states + s]
    }

    /// `V(., c)`.
    pub fn slice(&self, c: usize) -> &[f64] {
        &self.values[c * self.n_states..(c + 1) * self.n_states]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn q_value(mdp: &TabularAugmentedMDP, op: Operator, v: &[f64], x: usize, a: usize) -> f64 {
    let (s, c) = mdp.split(x);
    let row = mdp.row(x, a);
    let mut q = 0.0;
    for (x2, &p) in row.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let (s2, _) = mdp.split(x2);
        let r = mdp.reward(c, s, a, s2);
        let same = v[mdp.index(s2, c)];
        let target = match op {
            Operator::Naive => r + mdp.gamma * v[x2],
            Operator::Corrected => r + mdp.gamma * same,
            Operator::DynamicReward => {
                let dynamic = r + mdp.gamma * (same - v[x2]);
                dynamic + mdp.gamma * v[x2]
            }
        };
        q += p * target;
    }
    q
}

/// `Q(x, .)` under `op` with successor values `v`.
pub fn q_values(mdp: &TabularAugmentedMDP, op: Operator, v: &[f64], x: usize) -> Vec<f64> {
    (0..mdp.n_actions).map(|a| q_value(mdp, op, v, x, a)).collect()
}

/// One optimality backup.
pub fn backup(mdp: &TabularAugmentedMDP, op: Operator, v: &[f64]) -> Vec<f64> {
    (0..mdp.n_aug())
        .map(|x| q_values(mdp, op, v, x).into_iter().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// One policy-evaluation backup for a deterministic policy.
pub fn backup_policy(mdp: &TabularAugmentedMDP, op: Operator, v: &[f64], policy: &[usize]) -> Vec<f64> {
    (0..mdp.n_aug()).map(|x| q_value(mdp, op, v, x, policy[x])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Run exactly this many backups from zero instead of iterating to
    /// tolerance.
    pub horizon: Option<usize>,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100_000,
            horizon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViResult {
    pub table: ValueTable,
    pub iterations: usize,
    /// Last `|V_{k+1} - V_k|_inf`.
    pub residual: f64,
    pub converged: bool,
    pub residuals: Vec<f64>,
}

impl ViResult {
    /// Ratios of consecutive residuals, skipping those already at rounding
    /// level.
    pub fn residual_ratios(&self, floor: f64) -> Vec<f64> {
        self.residuals
            .windows(2)
            .filter(|w| w[0] > floor && w[1] > floor)
            .map(|w| w[1] / w[0])
            .collect()
    }

    pub fn max_residual_ratio(&self, floor: f64) -> f64 {
        self.residual_ratios(floor).into_iter().fold(0.0, f64::max)
    }
}

/// Iterates `op` from zero. Non-convergence is reported, not raised.
pub fn value_iteration(mdp: &TabularAugmentedMDP, op: Operator, options: &ViOptions) -> ViResult {
    let mut table = ValueTable::zeros(mdp);
    let mut residuals = Vec::new();
    let sweeps = options.horizon.unwrap_or(options.max_iters);
    let mut converged = options.horizon.is_some();
    let mut iterations = 0;
    for _ in 0..sweeps {
        let next = backup(mdp, op, &table.values);
        let residual = sup_distance(&next, &table.values);
        table.values = next;
        residuals.push(residual);
        iterations += 1;
        if options.horizon.is_none() && residual <= options.tol {
            converged = true;
            break;
        }
    }
    let residual = residuals.last().copied().unwrap_or(0.0);
    ViResult {
        table,
        iterations,
        residual,
        converged: converged && residual.is_finite(),
        residuals,
    }
}

/// Greedy action per augmented state; among actions within `tie_tol` of the
/// best, the lowest index wins.
pub fn greedy_policy(mdp: &TabularAugmentedMDP, op: Operator, v: &[f64], tie_tol: f64) -> Vec<usize> {
    (0..mdp.n_aug())
        .map(|x| {
            let q = q_values(mdp, op, v, x);
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            q.iter().position(|&qa| qa >= best - tie_tol).unwrap_or(0)
        })
        .collect()
}

/// Exact fixed point of the policy backup, `(I - gamma P_pi) V = r_pi`.
/// Under the corrected operators the successor column is `(s', c)`.
pub fn evaluate_policy(mdp: &TabularAugmentedMDP, op: Operator, policy: &[usize]) -> Result<Vec<f64>> {
    let n = mdp.n_aug();
    if policy.len() != n || policy.iter().any(|&a| a >= mdp.n_actions) {
        return Err(SolverError::Shape("policy does not match the model".into()));
    }
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for x in 0..n {
        let (s, c) = mdp.split(x);
        let a = policy[x];
        for (x2, &p) in mdp.row(x, a).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (s2, _) = mdp.split(x2);
            b[x] += p * mdp.reward(c, s, a, s2);
            let col = match op {
                Operator::Naive => x2,
                Operator::Corrected | Operator::DynamicReward => mdp.index(s2, c),
            };
            a_mat[(x, col)] -= mdp.gamma * p;
        }
    }
    a_mat
        .lu()
        .solve(&b)
        .map(|v| v.iter().copied().collect())
        .ok_or(SolverError::Singular("policy evaluation"))
}

/// Exact value of a deterministic policy on a plain tabular MDP
/// `T[s][a][s']`, `R[s][a][s']`.
pub fn evaluate_base_policy(
    transition: &[Vec<Vec<f64>>],
    rewards: &[Vec<Vec<f64>>],
    gamma: f64,
    policy: &[usize],
) -> Result<Vec<f64>> {
    let n = transition.len();
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let a = policy[s];
        for s2 in 0..n {
            let p = transition[s][a][s2];
            b[s] += p * rewards[s][a][s2];
            a_mat[(s, s2)] -= gamma * p;
        }
    }
    a_mat
        .lu()
        .solve(&b)
        .map(|v| v.iter().copied().collect())
        .ok_or(SolverError::Singular("base policy evaluation"))
}
