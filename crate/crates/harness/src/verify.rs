//! Exact-solver checks run by `mavic verify`.

use std::time::Instant;

use mavic_core::envs::ChainSwitch;
use mavic_solver::{from_chain, random_instance, verify_decoupling, VerificationReport};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub instances: usize,
    pub lemma1_max_dev: f64,
    pub theorem1_pass: bool,
    pub max_optimality_gap: f64,
    pub passed: bool,
    pub seconds: f64,
    pub reports: Vec<VerificationReport>,
}

/// The chain built from the sweep base, then `verify.instances` seeded
/// random instances.
pub fn run_verify(run: &RunConfig) -> Result<VerifySummary> {
    let v = &run.verify;
    let clock = Instant::now();
    let chain = ChainSwitch::new(run.sweep.base.clone())?;
    let mut mdps = vec![(None, from_chain(&chain, &chain.registry(), v.beta)?)];
    for seed in v.first_seed..v.first_seed + v.instances {
        mdps.push((Some(seed), random_instance(seed, v.gamma)?.mdp));
    }
    let mut summary = VerifySummary {
        instances: mdps.len(),
        lemma1_max_dev: 0.0,
        theorem1_pass: true,
        max_optimality_gap: 0.0,
        passed: true,
        seconds: 0.0,
        reports: Vec::new(),
    };
    for (seed, mdp) in &mdps {
        let report = verify_decoupling(mdp, v.tol)?;
        summary.lemma1_max_dev = summary.lemma1_max_dev.max(report.lemma1_max_dev);
        summary.max_optimality_gap = summary.max_optimality_gap.max(report.max_optimality_gap);
        summary.theorem1_pass &= report.theorem1_pass;
        summary.passed &= report.passed(v.tol);
        summary.reports.push(report.summary(*seed));
    }
    summary.seconds = clock.elapsed().as_secs_f64();
    Ok(summary)
}
