//! Tabular instruction-augmented MDPs over `S x C`.

use mavic_core::envs::ChainSwitch;
use mavic_core::instructions::{InstructionRegistry, NULL_CLASS};
use mavic_core::model::EnvModel;
use mavic_core::seeded_rng;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

const ROW_TOL: f64 = 1e-10;

/// `T'((s,c), a, (s',c')) = T(s,a,s') P(c'|c)` with per-class rewards
/// `R_c(s,a,s')`.
///
/// Augmented states are indexed class-major: `x = c * n_states + s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularAugmentedMDP {
    pub n_states: usize,
    pub n_classes: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Dense `P[x][a][x']`.
    transition: Vec<f64>,
    /// `R[c][s][a][s']`.
    rewards: Vec<f64>,
    /// Base states at which an episode ends. Informational; the tensors
    /// already make them absorbing when built from an environment.
    pub terminal: Vec<bool>,
}

impl TabularAugmentedMDP {
    /// Builds the product tensor from a base transition `T[s][a][s']`, a
    /// class transition matrix `P[c][c']` and rewards `R[c][s][a][s']`.
    pub fn from_factored(
        base: &[Vec<Vec<f64>>],
        class_transition: &[Vec<f64>],
        rewards: &[Vec<Vec<Vec<f64>>>],
        gamma: f64,
    ) -> Result<Self> {
        let n_states = base.len();
        let n_classes = class_transition.len();
        if n_states == 0 || n_classes == 0 {
            return Err(SolverError::Shape("empty state or class set".into()));
        }
        let n_actions = base[0].len();
        let shape_ok = base.iter().all(|r| r.len() == n_actions && r.iter().all(|p| p.len() == n_states))
            && class_transition.iter().all(|r| r.len() == n_classes)
            && rewards.len() == n_classes
            && rewards.iter().all(|rc| {
                rc.len() == n_states && rc.iter().all(|ra| ra.len() == n_actions && ra.iter().all(|r| r.len() == n_states))
            });
        if !shape_ok || n_actions == 0 {
            return Err(SolverError::Shape("inconsistent tensor shapes".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(SolverError::Shape(format!("gamma {gamma} outside [0,1]")));
        }
        let nx = n_states * n_classes;
        let mut transition = vec![0.0; nx * n_actions * nx];
        for c in 0..n_classes {
            for s in 0..n_states {
                for a in 0..n_actions {
                    for c2 in 0..n_classes {
                        for s2 in 0..n_states {
                            let x = c * n_states + s;
                            let x2 = c2 * n_states + s2;
                            transition[(x * n_actions + a) * nx + x2] = base[s][a][s2] * class_transition[c][c2];
                        }
                    }
                }
            }
        }
        let flat_rewards = rewards.iter().flatten().flatten().flatten().copied().collect();
        let mdp = Self {
            n_states,
            n_classes,
            n_actions,
            gamma,
            transition,
            rewards: flat_rewards,
            terminal: vec![false; n_states],
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds from a dense augmented tensor `P[x][a][x']` and `R[c][s][a][s']`.
    pub fn from_dense(
        n_states: usize,
        n_classes: usize,
        n_actions: usize,
        transition: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let nx = n_states * n_classes;
        if transition.len() != nx * n_actions * nx || rewards.len() != n_classes * n_states * n_actions * n_states {
            return Err(SolverError::Shape("dense tensor sizes do not match".into()));
        }
        let mdp = Self {
            n_states,
            n_classes,
            n_actions,
            gamma,
            transition,
            rewards,
            terminal: vec![false; n_states],
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        for x in 0..self.n_aug() {
            for a in 0..self.n_actions {
                let row = self.row(x, a);
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(SolverError::Shape(format!("negative or non-finite probability in row ({x},{a})")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(SolverError::Shape(format!("row ({x},{a}) sums to {sum}")));
                }
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(SolverError::Shape("non-finite reward".into()));
        }
        Ok(())
    }

    pub fn n_aug(&self) -> usize {
        self.n_states * self.n_classes
    }

    pub fn index(&self, s: usize, c: usize) -> usize {
        c * self.n_states + s
    }

    pub fn split(&self, x: usize) -> (usize, usize) {
        (x % self.n_states, x / self.n_states)
    }

    /// `P[x][a][.]`.
    pub fn row(&self, x: usize, a: usize) -> &[f64] {
        let nx = self.n_aug();
        let start = (x * self.n_actions + a) * nx;
        &self.transition[start..start + nx]
    }

    pub fn reward(&self, c: usize, s: usize, a: usize, s2: usize) -> f64 {
        self.rewards[((c * self.n_states + s) * self.n_actions + a) * self.n_states + s2]
    }

    /// Base dynamics seen from class `c`: `T_c(s,a,s') = sum_c' P[(s,c),a,(s',c')]`.
    pub fn marginal_base(&self, c: usize) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        let row = self.row(self.index(s, c), a);
                        (0..self.n_states)
                            .map(|s2| (0..self.n_classes).map(|c2| row[self.index(s2, c2)]).sum())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Class dynamics from `(s, c)` under `a`: `sum_s' P[(s,c),a,(s',c')]`.
    pub fn marginal_class(&self, s: usize, c: usize, a: usize) -> Vec<f64> {
        let row = self.row(self.index(s, c), a);
        (0..self.n_classes)
            .map(|c2| (0..self.n_states).map(|s2| row[self.index(s2, c2)]).sum())
            .collect()
    }

    /// Largest deviation of the tensor from the product of its marginals.
    /// Zero (up to rounding) exactly when the instruction process is
    /// independent of the base transition.
    pub fn factorization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for c in 0..self.n_classes {
            let base = self.marginal_base(c);
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let pc = self.marginal_class(s, c, a);
                    let row = self.row(self.index(s, c), a);
                    for s2 in 0..self.n_states {
                        for c2 in 0..self.n_classes {
                            let dev = (row[self.index(s2, c2)] - base[s][a][s2] * pc[c2]).abs();
                            worst = worst.max(dev);
                        }
                    }
                }
            }
        }
        worst
    }

    /// Rewards of class `c` as `R[s][a][s']`.
    pub fn class_rewards(&self, c: usize) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| (0..self.n_states).map(|s2| self.reward(c, s, a, s2)).collect())
                    .collect()
            })
            .collect()
    }

    /// Copy with the instruction process replaced by `class_transition`.
    pub fn with_class_transition(&self, class_transition: &[Vec<f64>]) -> Result<Self> {
        let base = self.marginal_base(NULL_CLASS);
        let rewards: Vec<_> = (0..self.n_classes).map(|c| self.class_rewards(c)).collect();
        let mut m = Self::from_factored(&base, class_transition, &rewards, self.gamma)?;
        m.terminal = self.terminal.clone();
        Ok(m)
    }
}

/// `P(c'|c)`: from the null class an arrival with probability `beta`, split
/// by `weights` over the other classes; an active class reverts to the null
/// class with probability `1 / mean_duration`.
pub fn class_transition_matrix(beta: f64, weights: &[f64], mean_durations: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = weights.len() + 1;
    if mean_durations.len() != weights.len() {
        return Err(SolverError::Shape("one mean duration per non-null class".into()));
    }
    if !(0.0..=1.0).contains(&beta) || mean_durations.iter().any(|d| *d < 1.0) {
        return Err(SolverError::Shape("beta in [0,1] and durations >= 1 required".into()));
    }
    let total: f64 = weights.iter().sum();
    let mut m = vec![vec![0.0; n]; n];
    if n == 1 {
        m[0][0] = 1.0;
        return Ok(m);
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(SolverError::Shape(format!("class weights sum to {total}")));
    }
    m[0][0] = 1.0 - beta;
    for (k, w) in weights.iter().enumerate() {
        m[0][k + 1] = beta * w;
        let revert = 1.0 / mean_durations[k];
        m[k + 1][0] = revert;
        m[k + 1][k + 1] = 1.0 - revert;
    }
    Ok(m)
}

/// Tabular model of a ChainSwitch instance. Class weights default to
/// uniform over the non-null classes.
pub fn from_chain(chain: &ChainSwitch, registry: &InstructionRegistry, beta: f64) -> Result<TabularAugmentedMDP> {
    let n = chain.n_states();
    let base: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|s| {
            (0..2)
                .map(|a| {
                    let mut row = vec![0.0; n];
                    for (s2, p) in chain.transition_probs(s, a) {
                        row[s2] += p;
                    }
                    row
                })
                .collect()
        })
        .collect();
    let mut rewards = Vec::with_capacity(registry.len());
    for c in 0..registry.len() {
        let mut rc = vec![vec![vec![0.0; n]; 2]; n];
        for (s, rs) in rc.iter_mut().enumerate() {
            for (a, ra) in rs.iter_mut().enumerate() {
                for (s2, r) in ra.iter_mut().enumerate() {
                    *r = registry.reward_for(chain, c, &s, &[a], &s2)?;
                }
            }
        }
        rewards.push(rc);
    }
    let k = registry.len() - 1;
    let weights = vec![1.0 / k as f64; k];
    let durations: Vec<f64> = registry.classes()[1..].iter().map(|c| c.mean_duration as f64).collect();
    let ct = class_transition_matrix(beta, &weights, &durations)?;
    let mut m = TabularAugmentedMDP::from_factored(&base, &ct, &rewards, chain.discount())?;
    m.terminal = (0..n).map(|s| chain.is_terminal(&s)).collect();
    Ok(m)
}

/// Parameters of one random verification instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomInstance {
    pub seed: u64,
    pub beta: f64,
    pub mdp: TabularAugmentedMDP,
}

/// Seeded random instance: `|S|` in 2..=8, `|C|` in 2..=3, `|A|` in 2..=3,
/// Dirichlet(1) transition rows, rewards uniform in [-1, 1], arrival
/// probability in [0.05, 0.5], mean durations in [1, 10].
pub fn random_instance(seed: u64, gamma: f64) -> Result<RandomInstance> {
    let mut rng = seeded_rng(seed);
    let n_states = rng.random_range(2..=8);
    let n_classes = rng.random_range(2..=3);
    let n_actions = rng.random_range(2..=3);
    let beta = rng.random_range(0.05..=0.5);
    let base: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let draws: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
                    let total: f64 = draws.iter().sum();
                    draws.iter().map(|d| d / total).collect()
                })
                .collect()
        })
        .collect();
    let rewards: Vec<Vec<Vec<Vec<f64>>>> = (0..n_classes)
        .map(|_| {
            (0..n_states)
                .map(|_| {
                    (0..n_actions)
                        .map(|_| (0..n_states).map(|_| rng.random_range(-1.0..=1.0)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let k = n_classes - 1;
    let weights = vec![1.0 / k as f64; k];
    let durations: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..=10.0)).collect();
    let ct = class_transition_matrix(beta, &weights, &durations)?;
    Ok(RandomInstance {
        seed,
        beta,
        mdp: TabularAugmentedMDP::from_factored(&base, &ct, &rewards, gamma)?,
    })
}
