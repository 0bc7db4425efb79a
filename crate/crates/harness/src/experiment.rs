//! Multi-seed experiments: train each (mode, seed), evaluate, aggregate.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mavic_core::envs::{build_env, BuiltEnv};
use mavic_core::model::EnvModel;
use mavic_core::{trace, with_env};
use mavic_learner::collect::{action_histogram, trace_episode};
use mavic_learner::trainer::derive_seed;
use mavic_learner::{eval_base, eval_compliance, BaseStats, ComplianceStats, InstructionPlan, Mode, Policy, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, Aggregate};
use crate::config::{ExperimentSection, RunConfig};
use crate::error::Result;

/// Macro-selection counts of one agent under one fixed phrase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub phrase: String,
    /// The encoder has a vector of its own for the phrase.
    pub recognized: bool,
    pub agent: usize,
    pub counts: Vec<u64>,
    pub macro_names: Vec<String>,
}

impl HistogramRow {
    pub fn frequencies(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        self.counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    /// Most frequent macro and its frequency.
    pub fn dominant(&self) -> Option<(usize, f64)> {
        let freqs = self.frequencies();
        let (m, f) = freqs
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (m, &f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((m, f)),
            })?;
        (f > 0.0).then_some((m, f))
    }
}

/// Evaluation of one trained policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub base: BaseStats,
    pub compliance: ComplianceStats,
    pub histograms: Vec<HistogramRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub env: String,
    pub mode: Mode,
    pub seed: u64,
    pub train_seconds: f64,
    pub evaluation: Evaluation,
}

/// Options shared by every evaluation of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub base_episodes: usize,
    pub compliance_episodes: usize,
    pub beta: f64,
    pub weights: Option<Vec<f64>>,
    pub probe_phrases: Vec<String>,
    pub probe_episodes: usize,
    pub seed: u64,
    pub greedy: bool,
}

impl EvalOptions {
    pub fn from_run(run: &RunConfig) -> Self {
        let e = &run.experiment;
        Self {
            base_episodes: e.eval_episodes,
            compliance_episodes: e.compliance_episodes,
            beta: run.eval_beta(),
            weights: run.train.arrival_weights.clone(),
            probe_phrases: e.probe_phrases.clone(),
            probe_episodes: e.probe_episodes,
            seed: e.eval_seed,
            greedy: run.train.eval_greedy,
        }
    }
}

pub fn evaluate<E: EnvModel>(
    env: &E,
    registry: &mavic_core::instructions::InstructionRegistry,
    policy: &Policy,
    options: &EvalOptions,
) -> Result<Evaluation> {
    let base = eval_base(env, registry, policy, options.base_episodes, options.seed, options.greedy)?;
    let compliance = eval_compliance(
        env,
        registry,
        policy,
        options.beta,
        options.weights.as_deref(),
        options.compliance_episodes,
        options.seed,
        options.greedy,
    )?;
    let mut histograms = Vec::new();
    let phrases = std::iter::once(String::new()).chain(options.probe_phrases.iter().cloned());
    for phrase in phrases {
        if options.probe_episodes == 0 {
            break;
        }
        let counts = action_histogram(env, registry, policy, &phrase, options.probe_episodes, options.seed, options.greedy)?;
        for (agent, row) in counts.into_iter().enumerate() {
            histograms.push(HistogramRow {
                recognized: policy.encoder.knows(&phrase),
                phrase: phrase.clone(),
                agent,
                macro_names: env.macro_actions(agent).iter().map(|m| m.name.clone()).collect(),
                counts: row,
            });
        }
    }
    Ok(Evaluation {
        base,
        compliance,
        histograms,
    })
}

/// Directory of one run inside an experiment output directory.
pub fn run_dir(out: &Path, mode: Mode, seed: u64) -> std::path::PathBuf {
    out.join("runs").join(format!("{}_seed{seed}", mode.name()))
}

/// Trains and evaluates one (mode, seed). With `out`, the run's metrics
/// and checkpoints go to its run directory and `trace_episodes` live
/// episodes go to `out/traces/`.
pub fn run_seed(run: &RunConfig, built: &BuiltEnv, mode: Mode, seed: u64, out: Option<&Path>) -> Result<SeedResult> {
    let config = TrainConfig {
        mode,
        seed,
        ..run.train.clone()
    };
    config.validate()?;
    let options = EvalOptions::from_run(run);
    let dir = out.map(|o| run_dir(o, mode, seed));
    with_env!(&built.env, env => {
        let clock = Instant::now();
        let trained = Trainer::new(env, &built.registry, &config)?.run(dir.as_deref())?;
        let train_seconds = clock.elapsed().as_secs_f64();
        let evaluation = evaluate(env, &built.registry, &trained.policy, &options)?;
        if let Some(out) = out {
            write_traces(env, &built.registry, &trained.policy, &options, &run.experiment, mode, seed, out)?;
        }
        Ok(SeedResult {
            env: built.name().to_string(),
            mode,
            seed,
            train_seconds,
            evaluation,
        })
    })
}

#[allow(clippy::too_many_arguments)]
fn write_traces<E: EnvModel>(
    env: &E,
    registry: &mavic_core::instructions::InstructionRegistry,
    policy: &Policy,
    options: &EvalOptions,
    experiment: &ExperimentSection,
    mode: Mode,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let dir = out.join("traces");
    std::fs::create_dir_all(&dir)?;
    let plan = InstructionPlan::Arrivals {
        beta: options.beta,
        weights: options.weights.clone(),
    };
    for i in 0..experiment.trace_episodes {
        let episode_seed = derive_seed(options.seed, seed, i as u64);
        let outcome = trace_episode(env, registry, policy, &plan, episode_seed, options.greedy)?;
        let path = dir.join(format!("{}_seed{seed}_ep{i}.jsonl", mode.name()));
        trace::save(&outcome.trace, &path)?;
    }
    Ok(())
}

/// Aggregated row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub env: String,
    pub mode: Mode,
    pub base: Aggregate,
    /// Over the seeds where any instruction was issued.
    pub compliance: Option<Aggregate>,
    pub n_seeds: usize,
}

pub fn aggregate_rows(results: &[SeedResult], resamples: usize, seed: u64) -> Vec<ResultRow> {
    let mut keys: Vec<(String, Mode)> = Vec::new();
    for r in results {
        if !keys.iter().any(|(e, m)| *e == r.env && *m == r.mode) {
            keys.push((r.env.clone(), r.mode));
        }
    }
    keys.into_iter()
        .filter_map(|(env, mode)| {
            let runs: Vec<&SeedResult> = results.iter().filter(|r| r.env == env && r.mode == mode).collect();
            let base: Vec<f64> = runs.iter().map(|r| r.evaluation.base.mean).collect();
            let compliance: Vec<f64> = runs.iter().filter_map(|r| r.evaluation.compliance.compliance).collect();
            Some(ResultRow {
                base: aggregate(&base, resamples, crate::aggregate::DEFAULT_LEVEL, seed)?,
                compliance: aggregate(&compliance, resamples, crate::aggregate::DEFAULT_LEVEL, seed),
                n_seeds: runs.len(),
                env,
                mode,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub env: String,
    pub seeds: Vec<SeedResult>,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub fn runs(&self, mode: Mode) -> impl Iterator<Item = &SeedResult> {
        self.seeds.iter().filter(move |r| r.mode == mode)
    }
}

/// Every configured mode over every configured seed. With `out`, writes
/// the per-run directories, a combined `metrics.jsonl`, traces and the CSV
/// reports.
pub fn run_experiment(run: &RunConfig, out: Option<&Path>) -> Result<ExperimentResult> {
    let built = build_env(&run.train.env, &run.train.env_config)?;
    let mut seeds = Vec::new();
    for &mode in &run.experiment.modes {
        for &seed in &run.experiment.seeds {
            seeds.push(run_seed(run, &built, mode, seed, out)?);
        }
    }
    let rows = aggregate_rows(&seeds, run.experiment.bootstrap_resamples, run.experiment.bootstrap_seed);
    let result = ExperimentResult {
        env: built.name().to_string(),
        seeds,
        rows,
    };
    if let Some(out) = out {
        combine_metrics(run, out)?;
        crate::report::write_all(&result, &built.registry, out)?;
    }
    Ok(result)
}

fn combine_metrics(run: &RunConfig, out: &Path) -> Result<()> {
    let mut combined = File::create(out.join("metrics.jsonl"))?;
    for &mode in &run.experiment.modes {
        for &seed in &run.experiment.seeds {
            let text = std::fs::read_to_string(run_dir(out, mode, seed).join("metrics.jsonl"))?;
            combined.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}
