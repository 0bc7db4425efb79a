//! Warehouse tool delivery with heterogeneous agents.
//!
//! Two mobile robots move along a corridor whose cell 0 is the staging
//! area; worker stations sit further down. An arm stages tools from the
//! shelf onto the staging area, which takes a few consecutive steps. Mobile
//! robots pick staged tools and drop them at a station whose worker is at
//! work. Delivering the tool that comes next in the required order pays a
//! reward and advances the order. Workers go on break and come back on a
//! seeded random schedule.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::compliance::ComplianceRule;
use crate::error::{CoreError, Result};
use crate::instructions::{InstructionClass, InstructionRegistry, RewardSpec};
use crate::model::{
    one_hot, AgentHistory, AgentId, AgentView, EnvModel, GridSnapshot, ItemView, MacroAction,
    MacroId, PrimitiveAction, TerminationContext,
};
use crate::SimRng;

pub const TOOLS: usize = 4;
pub const ARM: AgentId = 2;

// Mobile primitives.
pub const LEFT: PrimitiveAction = 0;
pub const RIGHT: PrimitiveAction = 1;
pub const MOBILE_STAY: PrimitiveAction = 2;
pub const PICK_BASE: PrimitiveAction = 3;
pub const DROP: PrimitiveAction = 7;
const MOBILE_PRIMITIVES: usize = 8;
pub const GO_TO_STAGING: MacroId = 8;
pub const GO_TO_WORKER_BASE: MacroId = 9;

// Arm primitives: 0 stays, 1 + k works on staging tool k.
const ARM_PRIMITIVES: usize = 1 + TOOLS;
pub const STAGE_TOOL_BASE: MacroId = ARM_PRIMITIVES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarehouseConfig {
    pub corridor_len: usize,
    pub worker_stations: Vec<usize>,
    pub tool_order: Vec<usize>,
    pub stage_time: usize,
    pub correct_reward: f64,
    pub step_penalty: f64,
    pub break_prob: f64,
    pub return_prob: f64,
    pub instruction_reward: f64,
    pub mean_duration: u32,
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for WarehouseConfig {
    fn default() -> Self {
        Self {
            corridor_len: 7,
            worker_stations: vec![2, 4, 6],
            tool_order: vec![0, 1, 2, 3],
            stage_time: 2,
            correct_reward: 10.0,
            step_penalty: 0.05,
            break_prob: 0.05,
            return_prob: 0.2,
            instruction_reward: 10.0,
            mean_duration: 20,
            gamma: 0.99,
            horizon: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WarehouseState {
    pub mobile: Vec<usize>,
    pub holding: Vec<Option<usize>>,
    pub staged: Vec<bool>,
    /// Tool the arm is staging and consecutive steps spent on it.
    pub arm_progress: Option<(usize, usize)>,
    pub working: Vec<bool>,
    /// Index into the tool order of the next required tool.
    pub order_index: usize,
}

impl WarehouseState {
    fn on_shelf(&self, tool: usize) -> bool {
        !self.staged[tool] && !self.holding.contains(&Some(tool))
    }
}

#[derive(Clone, Debug)]
pub struct Warehouse {
    config: WarehouseConfig,
    mobile_macros: Vec<MacroAction>,
    arm_macros: Vec<MacroAction>,
}

impl Warehouse {
    pub fn new(config: WarehouseConfig) -> Result<Self> {
        if config.corridor_len < 2 {
            return Err(CoreError::Config("corridor needs at least 2 cells".into()));
        }
        if config.worker_stations.len() != 3
            || config
                .worker_stations
                .iter()
                .any(|&w| w == 0 || w >= config.corridor_len)
        {
            return Err(CoreError::Config(
                "expected 3 worker stations inside the corridor, away from staging".into(),
            ));
        }
        if config.tool_order.is_empty() || config.tool_order.iter().any(|&t| t >= TOOLS) {
            return Err(CoreError::Config(format!("tool order must use tools 0..{TOOLS}")));
        }
        if config.stage_time == 0 {
            return Err(CoreError::Config("stage_time must be positive".into()));
        }
        for p in [config.break_prob, config.return_prob, config.gamma] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::Config("probabilities and gamma must be in [0,1]".into()));
            }
        }
        if config.horizon == 0 {
            return Err(CoreError::Config("horizon must be positive".into()));
        }
        let mut mobile_macros = vec![
            MacroAction::primitive(0, "Left", LEFT),
            MacroAction::primitive(1, "Right", RIGHT),
            MacroAction::primitive(2, "Stay", MOBILE_STAY),
        ];
        for k in 0..TOOLS {
            mobile_macros.push(MacroAction::primitive(PICK_BASE + k, format!("Pick({k})"), PICK_BASE + k));
        }
        mobile_macros.push(MacroAction::primitive(DROP, "Drop", DROP));
        mobile_macros.push(MacroAction::new(GO_TO_STAGING, "GoToStaging"));
        for w in 0..3 {
            mobile_macros.push(MacroAction::new(GO_TO_WORKER_BASE + w, format!("GoToWorker({w})")));
        }
        let mut arm_macros = vec![MacroAction::primitive(0, "Stay", 0)];
        for k in 0..TOOLS {
            arm_macros.push(MacroAction::primitive(1 + k, format!("StageStep({k})"), 1 + k));
        }
        for k in 0..TOOLS {
            arm_macros.push(MacroAction::new(STAGE_TOOL_BASE + k, format!("StageTool({k})")));
        }
        Ok(Self {
            config,
            mobile_macros,
            arm_macros,
        })
    }

    pub fn config(&self) -> &WarehouseConfig {
        &self.config
    }

    pub fn registry(&self) -> InstructionRegistry {
        let mut classes = vec![InstructionClass::null()];
        for k in 0..TOOLS {
            let event = format!("deliver_tool_{k}");
            classes.push(InstructionClass {
                class_id: k + 1,
                name: format!("tool-{k}"),
                phrases: vec![
                    format!("get me tool {k}"),
                    format!("bring me tool {k}"),
                    format!("i need tool {k}"),
                ],
                reward_spec: RewardSpec::Redirect {
                    suppress: "deliver_correct".into(),
                    event: event.clone(),
                    amount: self.config.instruction_reward,
                },
                mean_duration: self.config.mean_duration,
                gating: None,
                compliance: Some(ComplianceRule::Achieve { event }),
            });
        }
        InstructionRegistry::new(classes).expect("warehouse registry is valid")
    }

    pub fn required_tool(&self, s: &WarehouseState) -> usize {
        self.config.tool_order[s.order_index % self.config.tool_order.len()]
    }

    /// Deterministic part of a step: everything except the workers' schedule.
    fn apply(&self, s: &WarehouseState, joint: &[PrimitiveAction]) -> (WarehouseState, Vec<String>, f64) {
        let mut next = s.clone();
        let mut events = Vec::new();
        let mut reward = 0.0;
        let last = self.config.corridor_len - 1;

        match joint[ARM] {
            a if (1..=TOOLS).contains(&a) => {
                let k = a - 1;
                if s.on_shelf(k) {
                    let steps = match s.arm_progress {
                        Some((t, n)) if t == k => n + 1,
                        _ => 1,
                    };
                    if steps >= self.config.stage_time {
                        next.staged[k] = true;
                        next.arm_progress = None;
                        events.push(format!("stage_tool_{k}"));
                    } else {
                        next.arm_progress = Some((k, steps));
                    }
                } else {
                    next.arm_progress = None;
                }
            }
            _ => next.arm_progress = None,
        }

        for i in 0..2 {
            let pos = s.mobile[i];
            match joint[i] {
                LEFT => next.mobile[i] = pos.saturating_sub(1),
                RIGHT => next.mobile[i] = (pos + 1).min(last),
                a if (PICK_BASE..PICK_BASE + TOOLS).contains(&a) => {
                    let k = a - PICK_BASE;
                    if pos == 0 && next.holding[i].is_none() && next.staged[k] {
                        next.staged[k] = false;
                        next.holding[i] = Some(k);
                        events.push(format!("pick_tool_{k}"));
                    }
                }
                DROP => {
                    let Some(k) = next.holding[i] else { continue };
                    if pos == 0 {
                        next.staged[k] = true;
                        next.holding[i] = None;
                    } else if let Some(w) = self.config.worker_stations.iter().position(|&p| p == pos) {
                        if s.working[w] {
                            next.holding[i] = None;
                            events.push(format!("deliver_tool_{k}"));
                            if k == self.required_tool(&next) {
                                events.push("deliver_correct".into());
                                reward += self.config.correct_reward;
                                next.order_index = (next.order_index + 1) % self.config.tool_order.len();
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        (next, events, reward)
    }

    fn move_toward(pos: usize, target: usize) -> PrimitiveAction {
        match pos.cmp(&target) {
            std::cmp::Ordering::Less => RIGHT,
            std::cmp::Ordering::Greater => LEFT,
            std::cmp::Ordering::Equal => MOBILE_STAY,
        }
    }
}

impl EnvModel for Warehouse {
    type State = WarehouseState;

    fn name(&self) -> &'static str {
        "warehouse"
    }

    fn agent_count(&self) -> usize {
        3
    }

    fn primitive_action_count(&self, agent: AgentId) -> usize {
        if agent == ARM {
            ARM_PRIMITIVES
        } else {
            MOBILE_PRIMITIVES
        }
    }

    fn macro_actions(&self, agent: AgentId) -> &[MacroAction] {
        if agent == ARM {
            &self.arm_macros
        } else {
            &self.mobile_macros
        }
    }

    fn observation_dim(&self) -> usize {
        let l = self.config.corridor_len;
        1 + l + (TOOLS + 1) + l + TOOLS + 3 + TOOLS + (TOOLS + 1)
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn discount(&self) -> f64 {
        self.config.gamma
    }

    fn initial_state(&self, _: &mut SimRng) -> WarehouseState {
        WarehouseState {
            mobile: vec![0, 0],
            holding: vec![None, None],
            staged: vec![false; TOOLS],
            arm_progress: None,
            working: vec![true; 3],
            order_index: 0,
        }
    }

    fn transition(&self, s: &WarehouseState, joint: &[PrimitiveAction], rng: &mut SimRng) -> WarehouseState {
        let (mut next, _, _) = self.apply(s, joint);
        for w in next.working.iter_mut() {
            let flip = if *w {
                self.config.break_prob
            } else {
                self.config.return_prob
            };
            if flip > 0.0 && rng.random_bool(flip) {
                *w = !*w;
            }
        }
        next
    }

    fn reward(&self, s: &WarehouseState, joint: &[PrimitiveAction], _: &WarehouseState) -> f64 {
        self.apply(s, joint).2 - self.config.step_penalty
    }

    fn events(&self, s: &WarehouseState, joint: &[PrimitiveAction], _: &WarehouseState) -> Vec<String> {
        self.apply(s, joint).1
    }

    fn event_reward(&self, event: &str) -> f64 {
        if event == "deliver_correct" {
            self.config.correct_reward
        } else {
            0.0
        }
    }

    fn observe(&self, agent: AgentId, s: &WarehouseState) -> Vec<f64> {
        let l = self.config.corridor_len;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let mut o = vec![flag(agent == ARM)];
        if agent == ARM {
            o.extend(vec![0.0; l]);
            o.extend(vec![0.0; TOOLS + 1]);
            o.extend(one_hot(s.mobile[0], l));
        } else {
            o.extend(one_hot(s.mobile[agent], l));
            o.extend(one_hot(s.holding[agent].unwrap_or(TOOLS), TOOLS + 1));
            o.extend(one_hot(s.mobile[1 - agent], l));
        }
        o.extend(s.staged.iter().map(|&b| flag(b)));
        o.extend(s.working.iter().map(|&b| flag(b)));
        o.extend(one_hot(self.required_tool(s), TOOLS));
        o.extend(one_hot(s.arm_progress.map(|(t, _)| t).unwrap_or(TOOLS), TOOLS + 1));
        o
    }

    fn is_terminal(&self, _: &WarehouseState) -> bool {
        false
    }

    fn initiable(&self, agent: AgentId, m: MacroId, s: &WarehouseState, _: &AgentHistory) -> bool {
        if agent == ARM {
            match m {
                0..STAGE_TOOL_BASE => true,
                m if m < STAGE_TOOL_BASE + TOOLS => s.on_shelf(m - STAGE_TOOL_BASE),
                _ => false,
            }
        } else {
            m < self.mobile_macros.len()
        }
    }

    fn low_level(&self, agent: AgentId, m: MacroId, s: &WarehouseState, _: &AgentHistory) -> PrimitiveAction {
        if agent == ARM {
            if m >= STAGE_TOOL_BASE {
                1 + (m - STAGE_TOOL_BASE)
            } else {
                m
            }
        } else {
            match m {
                GO_TO_STAGING => Self::move_toward(s.mobile[agent], 0),
                m if m >= GO_TO_WORKER_BASE => {
                    Self::move_toward(s.mobile[agent], self.config.worker_stations[m - GO_TO_WORKER_BASE])
                }
                m => m,
            }
        }
    }

    fn termination(&self, agent: AgentId, m: MacroId, ctx: &TerminationContext<'_, WarehouseState>) -> f64 {
        let next = ctx.next;
        let timeout = ctx.elapsed >= 2 * self.config.corridor_len + self.config.stage_time;
        let done = if agent == ARM {
            match m {
                m if m >= STAGE_TOOL_BASE => {
                    let k = m - STAGE_TOOL_BASE;
                    next.staged[k] || !next.on_shelf(k)
                }
                _ => true,
            }
        } else {
            match m {
                GO_TO_STAGING => next.mobile[agent] == 0,
                m if m >= GO_TO_WORKER_BASE => {
                    next.mobile[agent] == self.config.worker_stations[m - GO_TO_WORKER_BASE]
                }
                _ => true,
            }
        };
        if done || timeout {
            1.0
        } else {
            0.0
        }
    }

    fn state_repr(&self, s: &WarehouseState) -> serde_json::Value {
        json!({
            "mobile": s.mobile,
            "holding": s.holding,
            "staged": s.staged,
            "arm_progress": s.arm_progress,
            "working": s.working,
            "next_tool": self.required_tool(s),
        })
    }

    fn render(&self, s: &WarehouseState) -> GridSnapshot {
        let l = self.config.corridor_len;
        let mut row: Vec<String> = vec![String::new(); l];
        row[0] = "staging".into();
        for (w, &p) in self.config.worker_stations.iter().enumerate() {
            row[p] = if s.working[w] {
                format!("worker_{w}")
            } else {
                format!("worker_{w}_break")
            };
        }
        let mut agents: Vec<AgentView> = (0..2)
            .map(|i| AgentView {
                id: i,
                row: 1,
                col: s.mobile[i],
                heading: None,
                holding: s.holding[i].map(|k| format!("tool_{k}")),
            })
            .collect();
        agents.push(AgentView {
            id: ARM,
            row: 0,
            col: 0,
            heading: None,
            holding: s.arm_progress.map(|(k, _)| format!("staging_tool_{k}")),
        });
        let items = s
            .staged
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(k, _)| ItemView {
                kind: format!("tool_{k}"),
                row: 0,
                col: 0,
            })
            .collect();
        GridSnapshot {
            cells: vec![row, vec![String::new(); l]],
            agents,
            items,
        }
    }
}
