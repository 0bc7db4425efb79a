//! The environment contract shared by every simulator in the crate.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::SimRng;

pub type AgentId = usize;
pub type MacroId = usize;
pub type PrimitiveAction = usize;

/// A temporally extended action `<initiation, low-level policy, termination>`.
///
/// The three functions are evaluated by the owning environment through
/// [`EnvModel::initiable`], [`EnvModel::low_level`] and
/// [`EnvModel::termination`]; this struct only names the macro.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroAction {
    pub id: MacroId,
    pub name: String,
    /// Set when the macro is the one-step wrapper of a primitive action.
    pub primitive: Option<PrimitiveAction>,
}

impl MacroAction {
    pub fn new(id: MacroId, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            primitive: None,
        }
    }

    pub fn primitive(id: MacroId, name: impl Into<String>, action: PrimitiveAction) -> Self {
        Self {
            id,
            name: name.into(),
            primitive: Some(action),
        }
    }
}

/// Everything a termination function may inspect after a primitive step.
pub struct TerminationContext<'a, S> {
    pub previous: &'a S,
    pub next: &'a S,
    /// Primitive steps executed by the macro so far, including this one.
    pub elapsed: usize,
    pub history: &'a AgentHistory,
}

/// A cooperative macro-action Dec-POMDP.
///
/// Implementations must be deterministic given the generator they are handed:
/// replaying the same seed reproduces the same trajectory.
pub trait EnvModel {
    type State: Clone + fmt::Debug + PartialEq;

    fn name(&self) -> &'static str;
    fn agent_count(&self) -> usize;
    fn primitive_action_count(&self, agent: AgentId) -> usize;
    fn macro_actions(&self, agent: AgentId) -> &[MacroAction];
    /// Length of the vectors produced by [`EnvModel::observe`].
    fn observation_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn discount(&self) -> f64;

    fn initial_state(&self, rng: &mut SimRng) -> Self::State;
    fn transition(
        &self,
        state: &Self::State,
        joint: &[PrimitiveAction],
        rng: &mut SimRng,
    ) -> Self::State;
    /// Base task reward `R(s, a, s')`.
    fn reward(&self, state: &Self::State, joint: &[PrimitiveAction], next: &Self::State) -> f64;
    /// Named events that occurred on this step; instruction rewards and
    /// compliance predicates are phrased in terms of them.
    fn events(
        &self,
        _state: &Self::State,
        _joint: &[PrimitiveAction],
        _next: &Self::State,
    ) -> Vec<String> {
        Vec::new()
    }
    /// Portion of the base reward attributable to one occurrence of `event`.
    fn event_reward(&self, _event: &str) -> f64 {
        0.0
    }
    /// Local observation of `agent` in `state`.
    fn observe(&self, agent: AgentId, state: &Self::State) -> Vec<f64>;
    fn is_terminal(&self, state: &Self::State) -> bool;

    fn initiable(
        &self,
        agent: AgentId,
        macro_id: MacroId,
        state: &Self::State,
        history: &AgentHistory,
    ) -> bool;
    fn low_level(
        &self,
        agent: AgentId,
        macro_id: MacroId,
        state: &Self::State,
        history: &AgentHistory,
    ) -> PrimitiveAction;
    /// Probability in `[0, 1]` that the macro ends after this step.
    fn termination(
        &self,
        agent: AgentId,
        macro_id: MacroId,
        ctx: &TerminationContext<'_, Self::State>,
    ) -> f64;

    /// Named state predicate used to restrict where instructions may arrive.
    fn gate(&self, _gate: &str, _state: &Self::State) -> bool {
        true
    }
    fn state_repr(&self, state: &Self::State) -> serde_json::Value;
    fn render(&self, state: &Self::State) -> GridSnapshot;

    fn macro_count(&self, agent: AgentId) -> usize {
        self.macro_actions(agent).len()
    }

    /// Initiation mask over the agent's macro set.
    fn initiation_mask(
        &self,
        agent: AgentId,
        state: &Self::State,
        history: &AgentHistory,
    ) -> Vec<bool> {
        (0..self.macro_count(agent))
            .map(|m| self.initiable(agent, m, state, history))
            .collect()
    }
}

/// One `(macro-observation, macro-action)` entry. `macro_id` is the macro
/// that produced the observation, `None` for the initial observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroEntry {
    pub observation: Vec<f64>,
    pub macro_id: Option<MacroId>,
}

/// Clipped macro and primitive histories of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentHistory {
    pub agent_id: AgentId,
    window: usize,
    macro_history: VecDeque<MacroEntry>,
    primitive_history: VecDeque<(Vec<f64>, PrimitiveAction)>,
}

impl AgentHistory {
    pub fn new(agent_id: AgentId, window: usize, initial_observation: Vec<f64>) -> Self {
        let window = window.max(1);
        let mut macro_history = VecDeque::with_capacity(window);
        macro_history.push_back(MacroEntry {
            observation: initial_observation,
            macro_id: None,
        });
        Self {
            agent_id,
            window,
            macro_history,
            primitive_history: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn push_macro(&mut self, observation: Vec<f64>, macro_id: MacroId) {
        if self.macro_history.len() == self.window {
            self.macro_history.pop_front();
        }
        self.macro_history.push_back(MacroEntry {
            observation,
            macro_id: Some(macro_id),
        });
    }

    pub fn push_primitive(&mut self, observation: Vec<f64>, action: PrimitiveAction) {
        if self.primitive_history.len() == self.window {
            self.primitive_history.pop_front();
        }
        self.primitive_history.push_back((observation, action));
    }

    pub fn macro_history(&self) -> impl ExactSizeIterator<Item = &MacroEntry> {
        self.macro_history.iter()
    }

    pub fn primitive_history(&self) -> impl ExactSizeIterator<Item = &(Vec<f64>, PrimitiveAction)> {
        self.primitive_history.iter()
    }

    pub fn latest_observation(&self) -> &[f64] {
        self.macro_history
            .back()
            .map(|e| e.observation.as_slice())
            .unwrap_or(&[])
    }

    /// Flattened window, oldest first, zero-padded at the front. Each slot is
    /// the observation followed by a one-hot of the macro that produced it.
    pub fn features(&self, observation_dim: usize, macro_count: usize) -> Vec<f64> {
        let slot = observation_dim + macro_count;
        let mut out = vec![0.0; self.window * slot];
        let offset = self.window - self.macro_history.len();
        for (i, entry) in self.macro_history.iter().enumerate() {
            let base = (offset + i) * slot;
            let n = entry.observation.len().min(observation_dim);
            out[base..base + n].copy_from_slice(&entry.observation[..n]);
            if let Some(m) = entry.macro_id {
                if m < macro_count {
                    out[base + observation_dim + m] = 1.0;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: AgentId,
    pub row: usize,
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holding: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub kind: String,
    pub row: usize,
    pub col: usize,
}

/// Renderable grid snapshot consumed by the live console.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSnapshot {
    pub cells: Vec<Vec<String>>,
    pub agents: Vec<AgentView>,
    pub items: Vec<ItemView>,
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if index < len {
        v[index] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_clipped_in_temporal_order() {
        let mut h = AgentHistory::new(0, 3, vec![0.0]);
        for m in 0..5 {
            h.push_macro(vec![m as f64 + 1.0], m);
        }
        let entries: Vec<_> = h.macro_history().map(|e| e.macro_id).collect();
        assert_eq!(entries, vec![Some(2), Some(3), Some(4)]);
        assert_eq!(h.latest_observation(), &[5.0]);
    }

    #[test]
    fn features_pad_at_front() {
        let mut h = AgentHistory::new(0, 2, vec![1.0, 0.0]);
        assert_eq!(h.features(2, 2), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        h.push_macro(vec![0.0, 1.0], 1);
        assert_eq!(h.features(2, 2), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
