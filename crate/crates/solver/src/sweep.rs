//! Exact compliance and base-return evaluation on ChainSwitch, and the
//! (arrival probability, penalty) contamination sweep.

use std::io::Write;

use mavic_core::compliance::ComplianceRule;
use mavic_core::envs::{ChainConfig, ChainSwitch};
use mavic_core::instructions::{InstructionRegistry, NULL_CLASS};
use mavic_core::model::EnvModel;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::mdp::{from_chain, TabularAugmentedMDP};
use crate::operators::{evaluate_base_policy, evaluate_policy, greedy_policy, sup_distance, value_iteration, Operator, ViOptions};
use crate::oracle::solve_class;

/// Which augmented transitions break the instruction in force.
#[derive(Clone, Debug)]
pub struct ComplianceModel {
    /// `violates[((c * S + s) * A + a) * S + s']`.
    violates: Vec<bool>,
    pub start: usize,
    pub horizon: usize,
}

impl ComplianceModel {
    pub fn from_chain(chain: &ChainSwitch, registry: &InstructionRegistry, mdp: &TabularAugmentedMDP) -> Result<Self> {
        let (n, na) = (mdp.n_states, mdp.n_actions);
        let mut violates = vec![false; mdp.n_classes * n * na * n];
        for c in 0..mdp.n_classes {
            let ComplianceRule::Avoid { event } = registry.class(c)?.rule() else {
                continue;
            };
            for s in 0..n {
                for a in 0..na {
                    for s2 in 0..n {
                        violates[((c * n + s) * na + a) * n + s2] = chain.events(&s, &[a], &s2).contains(&event);
                    }
                }
            }
        }
        Ok(Self {
            violates,
            start: chain.start(),
            horizon: chain.horizon(),
        })
    }

    fn violates(&self, mdp: &TabularAugmentedMDP, c: usize, s: usize, a: usize, s2: usize) -> bool {
        self.violates[((c * mdp.n_states + s) * mdp.n_actions + a) * mdp.n_states + s2]
    }
}

/// Expected issued and violated instructions over one episode, by forward
/// propagation of the distribution over `(s, c, violated-yet)`. Arrivals into
/// a terminal state or after the last step are never in force and are not
/// counted as issued.
pub fn exact_compliance(mdp: &TabularAugmentedMDP, model: &ComplianceModel, policy: &[usize]) -> (f64, f64) {
    let n = mdp.n_aug();
    let mut dist = vec![[0.0f64; 2]; n];
    dist[mdp.index(model.start, NULL_CLASS)][0] = 1.0;
    let (mut issued, mut violated) = (0.0, 0.0);
    for t in 0..model.horizon {
        let last = t + 1 == model.horizon;
        let mut next = vec![[0.0f64; 2]; n];
        for x in 0..n {
            let (s, c) = mdp.split(x);
            if mdp.terminal[s] {
                continue;
            }
            let a = policy[x];
            for flag in 0..2 {
                let mass = dist[x][flag];
                if mass == 0.0 {
                    continue;
                }
                for (x2, &p) in mdp.row(x, a).iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let (s2, c2) = mdp.split(x2);
                    let m = mass * p;
                    let mut f = flag;
                    if c != NULL_CLASS && f == 0 && model.violates(mdp, c, s, a, s2) {
                        violated += m;
                        f = 1;
                    }
                    if last || mdp.terminal[s2] {
                        continue;
                    }
                    if c2 != c {
                        f = 0;
                        if c == NULL_CLASS {
                            issued += m;
                        }
                    }
                    next[x2][f] += m;
                }
            }
        }
        dist = next;
    }
    (issued, violated)
}

pub fn compliance_rate(issued: f64, violated: f64) -> f64 {
    if issued <= 0.0 {
        1.0
    } else {
        1.0 - violated / issued
    }
}

/// Discounted return from `start` of the policy's null-class slice with no
/// instructions ever arriving.
pub fn base_return(mdp: &TabularAugmentedMDP, policy: &[usize], start: usize) -> Result<f64> {
    let slice: Vec<usize> = (0..mdp.n_states).map(|s| policy[mdp.index(s, NULL_CLASS)]).collect();
    let v = evaluate_base_policy(&mdp.marginal_base(NULL_CLASS), &mdp.class_rewards(NULL_CLASS), mdp.gamma, &slice)?;
    Ok(v[start])
}

/// Every deterministic policy whose naive-operator value is within `tol` of
/// `optimum` everywhere. Actions at terminal states are fixed to 0.
pub fn enumerate_optimal(
    mdp: &TabularAugmentedMDP,
    op: Operator,
    optimum: &[f64],
    tol: f64,
    limit: u128,
) -> Result<Vec<Vec<usize>>> {
    let free: Vec<usize> = (0..mdp.n_aug()).filter(|&x| !mdp.terminal[mdp.split(x).0]).collect();
    let total = (mdp.n_actions as u128).checked_pow(free.len() as u32).unwrap_or(u128::MAX);
    if total > limit {
        return Err(SolverError::TooManyPolicies(total));
    }
    let mut found = Vec::new();
    let mut policy = vec![0; mdp.n_aug()];
    for code in 0..total {
        let mut rest = code;
        for &x in &free {
            policy[x] = (rest % mdp.n_actions as u128) as usize;
            rest /= mdp.n_actions as u128;
        }
        let v = evaluate_policy(mdp, op, &policy)?;
        if sup_distance(&v, optimum) <= tol {
            found.push(policy.clone());
        }
    }
    Ok(found)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub base: ChainConfig,
    pub betas: Vec<f64>,
    pub penalties: Vec<f64>,
    pub compliance_threshold: f64,
    /// Required fraction of the no-instruction optimum.
    pub base_threshold: f64,
    pub tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            base: ChainConfig::default(),
            betas: vec![0.1, 0.3, 0.5],
            penalties: vec![10.0, 20.0, 50.0],
            compliance_threshold: 0.95,
            base_threshold: 0.95,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub penalty: f64,
    pub base_optimum: f64,
    pub naive_base_return: f64,
    pub naive_compliance: f64,
    pub corrected_base_return: f64,
    pub corrected_compliance: f64,
    /// Size of the naive-optimal policy set.
    pub naive_optimal_policies: usize,
    /// Some naive-optimal policy meets both thresholds.
    pub naive_attains_both: bool,
    pub corrected_attains_both: bool,
}

impl SweepRow {
    /// Grid point where no naive-optimal policy is both compliant and
    /// near-optimal on the base task.
    pub fn contaminated(&self) -> bool {
        !self.naive_attains_both
    }
}

fn meets(options: &SweepOptions, base: f64, optimum: f64, compliance: f64) -> bool {
    compliance >= options.compliance_threshold && base >= options.base_threshold * optimum
}

pub fn sweep_point(options: &SweepOptions, beta: f64, penalty: f64) -> Result<SweepRow> {
    let chain = ChainSwitch::new(ChainConfig {
        penalty,
        ..options.base.clone()
    })?;
    let registry = chain.registry();
    let mdp = from_chain(&chain, &registry, beta)?;
    let model = ComplianceModel::from_chain(&chain, &registry, &mdp)?;
    let vi = ViOptions {
        tol: 1e-12,
        ..Default::default()
    };
    let (base_values, _) = solve_class(&mdp, NULL_CLASS, 1e-12, vi.max_iters);
    let base_optimum = base_values[model.start];

    let naive = value_iteration(&mdp, Operator::Naive, &vi);
    let naive_policy = greedy_policy(&mdp, Operator::Naive, &naive.table.values, 1e-9);
    let naive_base = base_return(&mdp, &naive_policy, model.start)?;
    let (i, v) = exact_compliance(&mdp, &model, &naive_policy);
    let naive_compliance = compliance_rate(i, v);

    let exact_naive = evaluate_policy(&mdp, Operator::Naive, &naive_policy)?;
    let optimal_set = enumerate_optimal(&mdp, Operator::Naive, &exact_naive, options.tol, 1 << 20)?;
    let mut naive_attains_both = false;
    for policy in &optimal_set {
        let base = base_return(&mdp, policy, model.start)?;
        let (i, v) = exact_compliance(&mdp, &model, policy);
        naive_attains_both |= meets(options, base, base_optimum, compliance_rate(i, v));
    }

    let corrected = value_iteration(&mdp, Operator::Corrected, &vi);
    let corrected_policy = greedy_policy(&mdp, Operator::Corrected, &corrected.table.values, 1e-9);
    let corrected_base = base_return(&mdp, &corrected_policy, model.start)?;
    let (i, v) = exact_compliance(&mdp, &model, &corrected_policy);
    let corrected_compliance = compliance_rate(i, v);

    Ok(SweepRow {
        beta,
        penalty,
        base_optimum,
        naive_base_return: naive_base,
        naive_compliance,
        corrected_base_return: corrected_base,
        corrected_compliance,
        naive_optimal_policies: optimal_set.len(),
        naive_attains_both,
        corrected_attains_both: meets(options, corrected_base, base_optimum, corrected_compliance),
    })
}

/// Rows in grid order: arrival probability outer, penalty inner.
pub fn contamination_sweep(options: &SweepOptions) -> Result<Vec<SweepRow>> {
    if options.betas.is_empty() || options.penalties.is_empty() {
        return Err(SolverError::EmptyGrid);
    }
    let mut rows = Vec::new();
    for &beta in &options.betas {
        for &penalty in &options.penalties {
            rows.push(sweep_point(options, beta, penalty)?);
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    beta: f64,
    penalty: f64,
    operator: &'a str,
    base_return: f64,
    compliance: f64,
}

/// Two lines per grid point, one per operator.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(CsvRow {
            beta: row.beta,
            penalty: row.penalty,
            operator: "naive",
            base_return: row.naive_base_return,
            compliance: row.naive_compliance,
        })?;
        w.serialize(CsvRow {
            beta: row.beta,
            penalty: row.penalty,
            operator: "corrected",
            base_return: row.corrected_base_return,
            compliance: row.corrected_compliance,
        })?;
    }
    w.flush()?;
    Ok(())
}
