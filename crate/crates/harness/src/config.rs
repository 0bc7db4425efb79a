//! Run configuration files: a training section plus optional
//! `experiment`, `sweep` and `verify` sections.

use std::collections::BTreeSet;
use std::path::Path;

use mavic_core::config::parse_section;
use mavic_core::envs::ChainConfig;
use mavic_learner::{Mode, TrainConfig};
use mavic_solver::SweepOptions;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Episodes for the no-instruction evaluation.
    pub eval_episodes: usize,
    /// Episodes for the live-arrival compliance evaluation.
    pub compliance_episodes: usize,
    /// Arrival probability during compliance evaluation; the training
    /// config's evaluation probability when absent.
    pub eval_arrival_prob: Option<f64>,
    /// Phrases for the action-distribution probe.
    pub probe_phrases: Vec<String>,
    pub probe_episodes: usize,
    /// Episodes per run written to `traces/`.
    pub trace_episodes: usize,
    pub eval_seed: u64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            seeds: (0..5).collect(),
            eval_episodes: 50,
            compliance_episodes: 200,
            eval_arrival_prob: None,
            probe_phrases: vec![
                "fly to the moon".into(),
                "bake a chocolate cake".into(),
                "sing the anthem".into(),
            ],
            probe_episodes: 20,
            trace_episodes: 1,
            eval_seed: 1_000_003,
            bootstrap_resamples: crate::aggregate::DEFAULT_RESAMPLES,
            bootstrap_seed: 0,
        }
    }
}

impl ExperimentSection {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("experiment.seeds must not be empty");
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("experiment.seeds must be distinct");
        }
        if self.modes.is_empty() {
            return bad("experiment.modes must not be empty");
        }
        if self.eval_episodes == 0 || self.compliance_episodes == 0 {
            return bad("evaluation episode counts must be positive");
        }
        if self.eval_arrival_prob.is_some_and(|b| !(0.0..=1.0).contains(&b)) {
            return bad("experiment.eval_arrival_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifySection {
    /// Seeded random tabular instances checked besides the chain.
    pub instances: u64,
    pub first_seed: u64,
    pub gamma: f64,
    pub tol: f64,
    /// Arrival probability used for the chain instance.
    pub beta: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            instances: 20,
            first_seed: 0,
            gamma: 0.9,
            tol: 1e-6,
            beta: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub experiment: ExperimentSection,
    pub sweep: SweepOptions,
    pub verify: VerifySection,
}

impl RunConfig {
    pub fn from_value(value: &Value) -> Result<Self> {
        let mut obj = match value {
            Value::Null => serde_json::Map::new(),
            Value::Object(o) => o.clone(),
            other => return Err(HarnessError::Config(format!("expected a JSON object, found {other}"))),
        };
        let experiment: ExperimentSection = parse_section(&obj.remove("experiment").unwrap_or(Value::Null))?;
        let sweep_value = obj.remove("sweep").unwrap_or(Value::Null);
        let verify: VerifySection = parse_section(&obj.remove("verify").unwrap_or(Value::Null))?;
        let train = TrainConfig::from_value(&Value::Object(obj))?;
        let mut sweep: SweepOptions = parse_section(&sweep_value)?;
        let explicit_base = sweep_value.get("base").is_some();
        if !explicit_base && train.env == "chain" {
            sweep.base = parse_section::<ChainConfig>(&train.env_config)?;
        }
        experiment.validate()?;
        Ok(Self {
            train,
            experiment,
            sweep,
            verify,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::ConfigFile {
            path: path.display().to_string(),
            source,
        })?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(&value)
    }

    pub fn eval_beta(&self) -> f64 {
        self.experiment.eval_arrival_prob.unwrap_or_else(|| self.train.eval_beta())
    }
}
