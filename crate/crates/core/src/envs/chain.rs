//! ChainSwitch: a single-agent corridor small enough to solve exactly.
//!
//! ```text
//!  0      1      2  ...  n-2     n-1
//! small  start  ---->   flag    big
//! ```
//!
//! From the start cell the agent can take the small sink on its left or
//! walk the one-way corridor to the big sink on the right. Inside the
//! corridor `Left` means "stay". The avoid instruction penalises entering
//! the flagged cell just before the big sink. Sinks are absorbing and pay
//! nothing once entered.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::compliance::ComplianceRule;
use crate::error::{CoreError, Result};
use crate::instructions::{InstructionClass, InstructionRegistry, RewardSpec};
use crate::model::{
    one_hot, AgentHistory, AgentId, AgentView, EnvModel, GridSnapshot, MacroAction, MacroId,
    PrimitiveAction, TerminationContext,
};
use crate::SimRng;

pub const LEFT: PrimitiveAction = 0;
pub const RIGHT: PrimitiveAction = 1;
pub const RUN_RIGHT: MacroId = 2;
pub const ENTER_FLAG: &str = "enter_flag";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_states: usize,
    pub small_reward: f64,
    pub big_reward: f64,
    /// Magnitude of the avoid-instruction penalty.
    pub penalty: f64,
    pub mean_duration: u32,
    pub gamma: f64,
    pub horizon: usize,
    /// Probability that a move fails and the agent stays put.
    pub slip: f64,
    pub step_cost: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_states: 6,
            small_reward: 5.0,
            big_reward: 10.0,
            penalty: 20.0,
            mean_duration: 50,
            gamma: 0.95,
            horizon: 30,
            slip: 0.0,
            step_cost: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChainSwitch {
    config: ChainConfig,
    macros: Vec<MacroAction>,
}

impl ChainSwitch {
    pub fn new(config: ChainConfig) -> Result<Self> {
        if config.n_states < 4 {
            return Err(CoreError::Config("chain needs at least 4 states".into()));
        }
        if !(0.0..=1.0).contains(&config.gamma) || !(0.0..1.0).contains(&config.slip) {
            return Err(CoreError::Config("gamma must be in [0,1] and slip in [0,1)".into()));
        }
        if config.horizon == 0 || config.mean_duration == 0 {
            return Err(CoreError::Config("horizon and mean_duration must be positive".into()));
        }
        let macros = vec![
            MacroAction::primitive(0, "Left", LEFT),
            MacroAction::primitive(1, "Right", RIGHT),
            MacroAction::new(RUN_RIGHT, "RunRight"),
        ];
        Ok(Self { config, macros })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn n_states(&self) -> usize {
        self.config.n_states
    }

    pub fn start(&self) -> usize {
        1
    }

    pub fn flagged(&self) -> usize {
        self.config.n_states - 2
    }

    pub fn registry(&self) -> InstructionRegistry {
        InstructionRegistry::new(vec![
            InstructionClass::null(),
            InstructionClass {
                class_id: 1,
                name: "avoid-flag".into(),
                phrases: vec![
                    "avoid the flagged cell".into(),
                    "don't enter the flag".into(),
                    "stay out of the flagged cell".into(),
                ],
                reward_spec: RewardSpec::PenaltyOnEvent {
                    event: ENTER_FLAG.into(),
                    amount: -self.config.penalty,
                },
                mean_duration: self.config.mean_duration,
                gating: None,
                compliance: Some(ComplianceRule::Avoid {
                    event: ENTER_FLAG.into(),
                }),
            },
        ])
        .expect("chain registry is valid")
    }

    fn deterministic_next(&self, s: usize, a: PrimitiveAction) -> usize {
        if self.is_terminal(&s) {
            return s;
        }
        match a {
            LEFT if s == 1 => 0,
            LEFT => s,
            _ => s + 1,
        }
    }

    /// Exact next-state distribution `T(s, a, .)` as `(s', p)` pairs.
    pub fn transition_probs(&self, s: usize, a: PrimitiveAction) -> Vec<(usize, f64)> {
        let target = self.deterministic_next(s, a);
        if target == s || self.config.slip == 0.0 {
            vec![(target, 1.0)]
        } else {
            vec![(target, 1.0 - self.config.slip), (s, self.config.slip)]
        }
    }
}

impl EnvModel for ChainSwitch {
    type State = usize;

    fn name(&self) -> &'static str {
        "chain"
    }

    fn agent_count(&self) -> usize {
        1
    }

    fn primitive_action_count(&self, _: AgentId) -> usize {
        2
    }

    fn macro_actions(&self, _: AgentId) -> &[MacroAction] {
        &self.macros
    }

    fn observation_dim(&self) -> usize {
        self.config.n_states
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn discount(&self) -> f64 {
        self.config.gamma
    }

    fn initial_state(&self, _: &mut SimRng) -> usize {
        self.start()
    }

    fn transition(&self, s: &usize, joint: &[PrimitiveAction], rng: &mut SimRng) -> usize {
        let target = self.deterministic_next(*s, joint[0]);
        if target != *s && self.config.slip > 0.0 && rng.random_bool(self.config.slip) {
            *s
        } else {
            target
        }
    }

    fn reward(&self, s: &usize, _: &[PrimitiveAction], next: &usize) -> f64 {
        if self.is_terminal(s) {
            return 0.0;
        }
        let n = self.config.n_states;
        let sink = if *next == 0 {
            self.config.small_reward
        } else if *next == n - 1 {
            self.config.big_reward
        } else {
            0.0
        };
        sink - self.config.step_cost
    }

    fn events(&self, s: &usize, _: &[PrimitiveAction], next: &usize) -> Vec<String> {
        if *next == self.flagged() && *s != *next {
            vec![ENTER_FLAG.to_string()]
        } else {
            Vec::new()
        }
    }

    fn observe(&self, _: AgentId, s: &usize) -> Vec<f64> {
        one_hot(*s, self.config.n_states)
    }

    fn is_terminal(&self, s: &usize) -> bool {
        *s == 0 || *s == self.config.n_states - 1
    }

    fn initiable(&self, _: AgentId, m: MacroId, s: &usize, _: &AgentHistory) -> bool {
        m < self.macros.len() && !self.is_terminal(s)
    }

    fn low_level(&self, _: AgentId, m: MacroId, _: &usize, _: &AgentHistory) -> PrimitiveAction {
        match m {
            0 => LEFT,
            _ => RIGHT,
        }
    }

    fn termination(&self, _: AgentId, m: MacroId, ctx: &TerminationContext<'_, usize>) -> f64 {
        if m == RUN_RIGHT && !self.is_terminal(ctx.next) {
            0.0
        } else {
            1.0
        }
    }

    fn state_repr(&self, s: &usize) -> serde_json::Value {
        json!({ "pos": s })
    }

    fn render(&self, s: &usize) -> GridSnapshot {
        let n = self.config.n_states;
        let cells = vec![(0..n)
            .map(|i| match i {
                0 => "sink_small".to_string(),
                i if i == n - 1 => "sink_big".to_string(),
                i if i == self.flagged() => "flag".to_string(),
                _ => String::new(),
            })
            .collect()];
        GridSnapshot {
            cells,
            agents: vec![AgentView {
                id: 0,
                row: 0,
                col: *s,
                ..Default::default()
            }],
            items: Vec::new(),
        }
    }
}
