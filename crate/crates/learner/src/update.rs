//! Replay-time value correction, segment returns and gradients.

use std::collections::HashMap;

use mavic_core::instructions::corrected_reward;
use mavic_core::model::{AgentId, MacroId};
use serde::{Deserialize, Serialize};

use crate::buffer::MacroTransition;
use crate::error::{LearnerError, Result};
use crate::nn::masked_softmax;
use crate::policy::Policy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Instruction-conditioned, with value correction at class changes.
    Mavic,
    /// Instruction-conditioned, plain bootstrapping.
    Naive,
    /// One instruction per episode, fixed for its whole length.
    Switch,
    /// No instructions during training and no instruction input.
    Vanilla,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Mavic, Mode::Naive, Mode::Switch, Mode::Vanilla];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Mavic => "mavic",
            Mode::Naive => "naive",
            Mode::Switch => "switch",
            Mode::Vanilla => "vanilla",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn corrects(self) -> bool {
        self == Mode::Mavic
    }
}

/// Critic target for a corrected segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapTarget {
    /// `rbar_corr + gamma^tau V(h', c')`, i.e. `rbar + gamma^tau V(h', c)`.
    #[default]
    ContinuationValue,
    /// [`segment_return`] applied to the corrected reward.
    DoubleDifference,
}

/// Advantage used by the actor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageForm {
    /// `G - V(h, c)` with `G` the critic target.
    #[default]
    FromSegmentReturn,
    /// `rbar_corr + gamma^tau V(h', c') - V(h, c)`. Identical to the default
    /// under [`BootstrapTarget::ContinuationValue`].
    IncomingBootstrap,
}

/// Eq.-5 segment return: `rbar + gamma^tau V_c` when the class is unchanged,
/// `rbar + gamma^tau (V_c - V_c')` when it changed, `rbar` at a terminal.
pub fn segment_return(rbar: f64, gamma: f64, duration: usize, v_c: f64, v_next: f64, same_class: bool, terminal: bool) -> f64 {
    if terminal {
        return rbar;
    }
    let discount = gamma.powi(duration as i32);
    if same_class {
        rbar + discount * v_c
    } else {
        rbar + discount * (v_c - v_next)
    }
}

/// Critic evaluations needed for one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluations {
    pub input: Vec<f64>,
    /// `V(h, c)` from the live critic.
    pub value: f64,
    /// `V(h', c)` and `V(h', c')` from the bootstrap critic.
    pub next_same: f64,
    pub next_incoming: f64,
}

/// Embedding lookups shared across a batch.
#[derive(Default)]
pub struct EmbeddingCache(HashMap<String, Vec<f64>>);

impl EmbeddingCache {
    pub fn get(&mut self, policy: &Policy, phrase: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.0.get(phrase) {
            return Ok(v.clone());
        }
        let v = policy.encoder.embed(phrase)?;
        self.0.insert(phrase.to_string(), v.clone());
        Ok(v)
    }
}

pub fn evaluate(
    t: &MacroTransition,
    live: &Policy,
    bootstrap: &Policy,
    cache: &mut EmbeddingCache,
) -> Result<Evaluations> {
    let e = cache.get(live, &t.phrase)?;
    let input = live.input(t.agent, &t.history, &e);
    let value = live.value(t.agent, &input);
    let next_same = bootstrap.value(t.agent, &bootstrap.input(t.agent, &t.history_next, &e));
    let next_incoming = if t.phrase_next == t.phrase {
        next_same
    } else {
        let e2 = cache.get(live, &t.phrase_next)?;
        bootstrap.value(t.agent, &bootstrap.input(t.agent, &t.history_next, &e2))
    };
    Ok(Evaluations {
        input,
        value,
        next_same,
        next_incoming,
    })
}

/// Corrected segment rewards for a batch. Only `Mode::Mavic` changes
/// anything, and only where the class changed. Transitions whose critic
/// values are not finite are flagged and keep their raw reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Correction {
    pub rewards: Vec<f64>,
    pub quarantined: Vec<bool>,
}

pub fn apply_correction(batch: &[MacroTransition], critic: &Policy, mode: Mode, gamma: f64) -> Result<Correction> {
    let mut cache = EmbeddingCache::default();
    let mut rewards = Vec::with_capacity(batch.len());
    let mut quarantined = Vec::with_capacity(batch.len());
    for t in batch {
        if !mode.corrects() || !t.class_changed() {
            rewards.push(t.reward);
            quarantined.push(false);
            continue;
        }
        let ev = evaluate(t, critic, critic, &mut cache)?;
        match corrected_reward(t.reward, gamma, t.duration, ev.next_same, ev.next_incoming, false) {
            Ok(r) => {
                rewards.push(r);
                quarantined.push(false);
            }
            Err(mavic_core::CoreError::NonFinite(_)) => {
                rewards.push(t.reward);
                quarantined.push(true);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Correction { rewards, quarantined })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetOptions {
    pub gamma: f64,
    pub bootstrap: BootstrapTarget,
    pub advantage: AdvantageForm,
}

/// Critic target and actor advantage for one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub input: Vec<f64>,
    pub value: f64,
    pub corrected_reward: f64,
    pub target: f64,
    pub advantage: f64,
}

/// `None` marks a quarantined transition (non-finite critic output).
pub fn compute_target(
    t: &MacroTransition,
    live: &Policy,
    bootstrap: &Policy,
    mode: Mode,
    options: &TargetOptions,
    cache: &mut EmbeddingCache,
) -> Result<Option<Target>> {
    let ev = evaluate(t, live, bootstrap, cache)?;
    if !(ev.value.is_finite() && ev.next_same.is_finite() && ev.next_incoming.is_finite()) {
        return Ok(None);
    }
    let changed = t.class_changed();
    let discount = options.gamma.powi(t.duration as i32);
    let corrected = if mode.corrects() {
        corrected_reward(t.reward, options.gamma, t.duration, ev.next_same, ev.next_incoming, !changed)?
    } else {
        t.reward
    };
    let incoming = if t.terminal { corrected } else { corrected + discount * ev.next_incoming };
    let target = match (mode.corrects(), options.bootstrap) {
        (true, BootstrapTarget::DoubleDifference) => segment_return(
            corrected,
            options.gamma,
            t.duration,
            ev.next_same,
            ev.next_incoming,
            !changed,
            t.terminal,
        ),
        _ => incoming,
    };
    let advantage = match options.advantage {
        AdvantageForm::FromSegmentReturn => target - ev.value,
        AdvantageForm::IncomingBootstrap => incoming - ev.value,
    };
    Ok(Some(Target {
        input: ev.input,
        value: ev.value,
        corrected_reward: corrected,
        target,
        advantage,
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorSample {
    pub input: Vec<f64>,
    pub mask: Vec<bool>,
    pub macro_id: MacroId,
    pub advantage: f64,
}

/// Gradient of the surrogate `mean_k A_k log pi(m_k | x_k) + coef * H(pi(.|x_k))`
/// with respect to the actor parameters of `agent` (ascent direction),
/// and the surrogate value.
pub fn actor_gradient(policy: &Policy, agent: AgentId, samples: &[ActorSample], entropy_coef: f64) -> Result<(Vec<f64>, f64)> {
    let net = &policy.nets[agent].actor;
    let mut grads = vec![0.0; net.param_count()];
    if samples.is_empty() {
        return Ok((grads, 0.0));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut objective = 0.0;
    for s in samples {
        let cache = net.forward(&s.input);
        if !s.mask.get(s.macro_id).copied().unwrap_or(false) {
            return Err(LearnerError::ZeroProbability(s.macro_id));
        }
        let logits = cache.output();
        let probs = masked_softmax(logits, &s.mask);
        // log pi from the logits, finite even where the softmax underflows.
        let max = logits
            .iter()
            .zip(&s.mask)
            .filter(|(_, m)| **m)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let log_z = max
            + logits
                .iter()
                .zip(&s.mask)
                .filter(|(_, m)| **m)
                .map(|(l, _)| (l - max).exp())
                .sum::<f64>()
                .ln();
        let log_p = logits[s.macro_id] - log_z;
        let entropy: f64 = -probs.iter().filter(|q| **q > 0.0).map(|q| q * q.ln()).sum::<f64>();
        objective += scale * (s.advantage * log_p + entropy_coef * entropy);
        let grad_logits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &q)| {
                if !s.mask[j] {
                    return 0.0;
                }
                let indicator = if j == s.macro_id { 1.0 } else { 0.0 };
                let policy_term = s.advantage * (indicator - q);
                let entropy_term = if q > 0.0 { -q * (q.ln() + entropy) } else { 0.0 };
                policy_term + entropy_coef * entropy_term
            })
            .collect();
        net.backward(&cache, &grad_logits, scale, &mut grads);
    }
    Ok((grads, objective))
}

/// Gradient of `mean_k (V(x_k) - G_k)^2 / 2` and the mean squared error.
pub fn critic_gradient(policy: &Policy, agent: AgentId, samples: &[(Vec<f64>, f64)]) -> (Vec<f64>, f64) {
    let net = &policy.nets[agent].critic;
    let mut grads = vec![0.0; net.param_count()];
    if samples.is_empty() {
        return (grads, 0.0);
    }
    let scale = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    for (input, target) in samples {
        let cache = net.forward(input);
        let err = cache.output()[0] - target;
        loss += scale * err * err;
        net.backward(&cache, &[err], scale, &mut grads);
    }
    (grads, loss)
}
