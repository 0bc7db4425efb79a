//! Per-agent actor and critic networks plus the frozen encoder.

use std::collections::HashMap;

use mavic_core::instructions::{ActiveInstruction, InstructionRegistry};
use mavic_core::model::{AgentHistory, AgentId, EnvModel, MacroId};
use mavic_core::rollout::MacroSelector;
use mavic_core::{seeded_rng, CoreError, SimRng};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderSpec};
use crate::error::{LearnerError, Result};
use crate::nn::{masked_softmax, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic: Mlp,
}

/// Shapes that tie a policy to an environment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub env: String,
    pub observation_dim: usize,
    pub macro_counts: Vec<usize>,
    pub history_window: usize,
    /// False for policies trained without instruction inputs.
    pub conditioned: bool,
}

impl PolicyShape {
    pub fn of<E: EnvModel>(env: &E, history_window: usize, conditioned: bool) -> Self {
        Self {
            env: env.name().to_string(),
            observation_dim: env.observation_dim(),
            macro_counts: (0..env.agent_count()).map(|a| env.macro_count(a)).collect(),
            history_window,
            conditioned,
        }
    }

    pub fn history_dim(&self, agent: AgentId) -> usize {
        self.history_window * (self.observation_dim + self.macro_counts[agent])
    }
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub shape: PolicyShape,
    pub nets: Vec<AgentNets>,
    pub encoder: Encoder,
}

impl Policy {
    pub fn new(shape: PolicyShape, encoder: Encoder, hidden: &[usize], seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let embed = if shape.conditioned { encoder.dim() } else { 0 };
        let nets = (0..shape.macro_counts.len())
            .map(|agent| {
                let input = shape.history_dim(agent) + embed;
                AgentNets {
                    actor: Mlp::new(input, hidden, shape.macro_counts[agent], 0.0, &mut rng),
                    critic: Mlp::new(input, hidden, 1, 0.0, &mut rng),
                }
            })
            .collect();
        Self { shape, nets, encoder }
    }

    pub fn from_parts(shape: PolicyShape, nets: Vec<AgentNets>, spec: EncoderSpec, registry: &InstructionRegistry) -> Result<Self> {
        let encoder = Encoder::new(spec, registry)?;
        let embed = if shape.conditioned { encoder.dim() } else { 0 };
        if nets.len() != shape.macro_counts.len() {
            return Err(LearnerError::Checkpoint("agent count differs from the shape".into()));
        }
        for (agent, n) in nets.iter().enumerate() {
            let input = shape.history_dim(agent) + embed;
            if n.actor.input_dim() != input || n.critic.input_dim() != input || n.actor.output_dim() != shape.macro_counts[agent] {
                return Err(LearnerError::Checkpoint(format!("network shapes for agent {agent} do not match")));
            }
        }
        Ok(Self { shape, nets, encoder })
    }

    pub fn agent_count(&self) -> usize {
        self.nets.len()
    }

    /// Network input: flattened history window, then the phrase embedding
    /// when the policy is instruction-conditioned.
    pub fn input(&self, agent: AgentId, history_features: &[f64], embedding: &[f64]) -> Vec<f64> {
        debug_assert_eq!(history_features.len(), self.shape.history_dim(agent));
        let mut x = history_features.to_vec();
        if self.shape.conditioned {
            x.extend_from_slice(embedding);
        }
        x
    }

    pub fn history_features(&self, agent: AgentId, history: &AgentHistory) -> Vec<f64> {
        history.features(self.shape.observation_dim, self.shape.macro_counts[agent])
    }

    pub fn probabilities(&self, agent: AgentId, input: &[f64], mask: &[bool]) -> Vec<f64> {
        masked_softmax(&self.nets[agent].actor.predict(input), mask)
    }

    pub fn value(&self, agent: AgentId, input: &[f64]) -> f64 {
        self.nets[agent].critic.predict(input)[0]
    }

    /// Selector for rollouts. `greedy` picks the most probable initiable
    /// macro (lowest index on ties) instead of sampling.
    pub fn selector(&self, greedy: bool) -> PolicySelector<'_> {
        PolicySelector {
            policy: self,
            greedy,
            cache: HashMap::new(),
            counts: Vec::new(),
        }
    }
}

/// Draws from a distribution with the generator handed in by the rollout.
pub fn sample(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

pub struct PolicySelector<'a> {
    policy: &'a Policy,
    greedy: bool,
    cache: HashMap<String, Vec<f64>>,
    /// `counts[agent][macro]` of selections so far.
    counts: Vec<Vec<u64>>,
}

impl PolicySelector<'_> {
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn take_counts(&mut self) -> Vec<Vec<u64>> {
        std::mem::take(&mut self.counts)
    }

    fn embedding(&mut self, phrase: &str) -> mavic_core::Result<&[f64]> {
        if !self.cache.contains_key(phrase) {
            let v = self
                .policy
                .encoder
                .embed(phrase)
                .map_err(|e| CoreError::Config(e.to_string()))?;
            self.cache.insert(phrase.to_string(), v);
        }
        Ok(&self.cache[phrase])
    }
}

impl MacroSelector for PolicySelector<'_> {
    fn select(
        &mut self,
        agent: AgentId,
        history: &AgentHistory,
        instruction: &ActiveInstruction,
        mask: &[bool],
        rng: &mut SimRng,
    ) -> mavic_core::Result<MacroId> {
        let features = self.policy.history_features(agent, history);
        let embedding = self.embedding(&instruction.phrase)?.to_vec();
        let input = self.policy.input(agent, &features, &embedding);
        let probs = self.policy.probabilities(agent, &input, mask);
        let choice = if self.greedy { argmax(&probs) } else { sample(&probs, rng) };
        if self.counts.len() < self.policy.agent_count() {
            self.counts = self
                .policy
                .shape
                .macro_counts
                .iter()
                .map(|&n| vec![0; n])
                .collect();
        }
        self.counts[agent][choice] += 1;
        Ok(choice)
    }
}
