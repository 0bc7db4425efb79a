//! Cooperative box pushing.
//!
//! Two agents with headings share a grid whose top row is the goal. A small
//! box moves one cell up when a single agent facing north walks into it. The
//! big box spans two cells and moves only when both agents push it in the
//! same step, one under each half. Any box reaching the top row ends the
//! episode.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::grid::{self, Pos};
use crate::compliance::ComplianceRule;
use crate::error::{CoreError, Result};
use crate::instructions::{InstructionClass, InstructionRegistry, RewardSpec};
use crate::model::{
    one_hot, AgentHistory, AgentId, AgentView, EnvModel, GridSnapshot, ItemView, MacroAction,
    MacroId, PrimitiveAction, TerminationContext,
};
use crate::SimRng;

pub const FORWARD: PrimitiveAction = 0;
pub const TURN_LEFT: PrimitiveAction = 1;
pub const TURN_RIGHT: PrimitiveAction = 2;
pub const STAY: PrimitiveAction = 3;

pub const GO_TO_BIG_BOX: MacroId = 0;
pub const GO_TO_SMALL_BOX: MacroId = 1;
pub const PUSH: MacroId = 2;

pub const NORTH: u8 = 0;
const HEADINGS: [&str; 4] = ["N", "E", "S", "W"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStart {
    pub row: usize,
    pub col: usize,
    /// 0 north, 1 east, 2 south, 3 west.
    pub heading: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxPushingConfig {
    pub rows: usize,
    pub cols: usize,
    /// Left cell of the two-cell big box.
    pub big_box: Pos,
    pub small_boxes: Vec<Pos>,
    pub agents: Vec<AgentStart>,
    pub big_reward: f64,
    pub small_reward: f64,
    pub step_penalty: f64,
    pub gamma: f64,
    pub horizon: usize,
    /// Magnitude of the "don't push" penalty per pushing agent.
    pub push_penalty: f64,
    pub small_bonus: f64,
    pub go_small_duration: u32,
    pub no_push_duration: u32,
    /// Gate restricting where "don't push" may arrive.
    pub no_push_gating: Option<String>,
    /// Steps after which a navigation macro gives up.
    pub navigation_timeout: Option<usize>,
}

impl Default for BoxPushingConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            big_box: Pos::new(1, 1),
            small_boxes: vec![Pos::new(1, 0), Pos::new(1, 3)],
            agents: vec![
                AgentStart {
                    row: 3,
                    col: 0,
                    heading: NORTH,
                },
                AgentStart {
                    row: 3,
                    col: 3,
                    heading: NORTH,
                },
            ],
            big_reward: 300.0,
            small_reward: 20.0,
            step_penalty: 0.1,
            gamma: 0.95,
            horizon: 30,
            push_penalty: 10.0,
            small_bonus: 5.0,
            go_small_duration: 20,
            no_push_duration: 20,
            no_push_gating: None,
            navigation_timeout: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxState {
    pub agents: Vec<(Pos, u8)>,
    pub big: Pos,
    pub small: Vec<Pos>,
}

#[derive(Clone, Debug)]
pub struct BoxPushing {
    config: BoxPushingConfig,
    macros: Vec<MacroAction>,
}

impl BoxPushing {
    pub fn new(config: BoxPushingConfig) -> Result<Self> {
        let (rows, cols) = (config.rows, config.cols);
        if rows < 3 || cols < 2 {
            return Err(CoreError::Config("box pushing grid must be at least 3x2".into()));
        }
        if config.agents.len() != 2 {
            return Err(CoreError::Config("box pushing needs exactly 2 agents".into()));
        }
        let mut cells = vec![config.big_box, Pos::new(config.big_box.row, config.big_box.col + 1)];
        cells.extend(config.small_boxes.iter().copied());
        cells.extend(config.agents.iter().map(|a| Pos::new(a.row, a.col)));
        for (i, p) in cells.iter().enumerate() {
            if p.row >= rows || p.col >= cols {
                return Err(CoreError::Config(format!("cell {p:?} lies outside the grid")));
            }
            if cells[..i].contains(p) {
                return Err(CoreError::Config(format!("cell {p:?} is occupied twice")));
            }
        }
        if cells[..2 + config.small_boxes.len()].iter().any(|p| p.row == 0) {
            return Err(CoreError::Config("boxes cannot start in the goal row".into()));
        }
        if config.agents.iter().any(|a| a.heading > 3) {
            return Err(CoreError::Config("headings are 0..=3".into()));
        }
        if !(0.0..=1.0).contains(&config.gamma) || config.horizon == 0 {
            return Err(CoreError::Config("gamma must be in [0,1], horizon positive".into()));
        }
        if let Some(g) = &config.no_push_gating {
            if !matches!(g.as_str(), "near_big_box" | "always") {
                return Err(CoreError::Config(format!("unknown gate `{g}`")));
            }
        }
        let macros = vec![
            MacroAction::new(GO_TO_BIG_BOX, "GoToBigBox"),
            MacroAction::new(GO_TO_SMALL_BOX, "GoToSmallBox"),
            MacroAction::new(PUSH, "Push"),
            MacroAction::primitive(3, "Forward", FORWARD),
            MacroAction::primitive(4, "TurnLeft", TURN_LEFT),
            MacroAction::primitive(5, "TurnRight", TURN_RIGHT),
            MacroAction::primitive(6, "Stay", STAY),
        ];
        Ok(Self { config, macros })
    }

    pub fn config(&self) -> &BoxPushingConfig {
        &self.config
    }

    pub fn registry(&self) -> InstructionRegistry {
        let c = &self.config;
        InstructionRegistry::new(vec![
            InstructionClass::null(),
            InstructionClass {
                class_id: 1,
                name: "go-small".into(),
                phrases: vec![
                    "go to small boxes".into(),
                    "go to the small boxes".into(),
                    "head for the small boxes".into(),
                ],
                reward_spec: RewardSpec::BonusOnEvent {
                    event: "reach_small_box".into(),
                    amount: c.small_bonus,
                },
                mean_duration: c.go_small_duration,
                gating: None,
                compliance: Some(ComplianceRule::Achieve {
                    event: "reach_small_box".into(),
                }),
            },
            InstructionClass {
                class_id: 2,
                name: "no-push".into(),
                phrases: vec![
                    "don't push the box".into(),
                    "do not push the box".into(),
                    "stop pushing".into(),
                ],
                reward_spec: RewardSpec::PenaltyOnEvent {
                    event: "push".into(),
                    amount: -c.push_penalty,
                },
                mean_duration: c.no_push_duration,
                gating: c.no_push_gating.clone(),
                compliance: Some(ComplianceRule::Avoid { event: "push".into() }),
            },
        ])
        .expect("box pushing registry is valid")
    }

    fn box_cells(&self, s: &BoxState) -> Vec<Pos> {
        let mut v = vec![s.big, Pos::new(s.big.row, s.big.col + 1)];
        v.extend(s.small.iter().copied());
        v
    }

    fn is_box(&self, s: &BoxState, p: Pos) -> bool {
        p == s.big || p == Pos::new(s.big.row, s.big.col + 1) || s.small.contains(&p)
    }

    /// Cell from which `agent` pushes its half of the big box.
    pub fn big_box_spot(&self, agent: AgentId, s: &BoxState) -> Option<Pos> {
        let p = Pos::new(s.big.row + 1, s.big.col + agent % 2);
        (p.row < self.config.rows).then_some(p)
    }

    /// Push spot under the small box closest to `agent`.
    pub fn small_box_spot(&self, agent: AgentId, s: &BoxState) -> Option<Pos> {
        let (rows, cols) = (self.config.rows, self.config.cols);
        let here = s.agents[agent].0;
        let blocked = |p: Pos| self.is_box(s, p);
        let dist = grid::distances(rows, cols, here, &blocked);
        s.small
            .iter()
            .filter(|b| b.row + 1 < rows)
            .map(|b| Pos::new(b.row + 1, b.col))
            .filter_map(|p| dist[p.row][p.col].map(|d| (d, p)))
            .min()
            .map(|(_, p)| p)
    }

    fn navigate(&self, s: &BoxState, agent: AgentId, target: Pos) -> PrimitiveAction {
        let (pos, heading) = s.agents[agent];
        let (rows, cols) = (self.config.rows, self.config.cols);
        let wanted = if pos == target {
            NORTH
        } else {
            let blocked = |p: Pos| self.is_box(s, p);
            match grid::next_cell(rows, cols, pos, target, &blocked) {
                Some(next) => pos.direction_to(next).unwrap_or(NORTH),
                None => return STAY,
            }
        };
        if heading == wanted {
            if pos == target {
                STAY
            } else {
                FORWARD
            }
        } else if (heading + 3) % 4 == wanted {
            TURN_LEFT
        } else {
            TURN_RIGHT
        }
    }

    fn facing_box(&self, s: &BoxState, agent: AgentId) -> bool {
        let (pos, heading) = s.agents[agent];
        heading == NORTH
            && pos
                .step(NORTH, self.config.rows, self.config.cols)
                .is_some_and(|p| self.is_box(s, p))
    }

    fn timeout(&self) -> usize {
        self.config
            .navigation_timeout
            .unwrap_or(2 * self.config.rows * self.config.cols)
    }

    fn pushers(&self, s: &BoxState, next: &BoxState) -> Vec<AgentId> {
        (0..s.agents.len())
            .filter(|&i| {
                let (p, h) = s.agents[i];
                h == NORTH && next.agents[i].0 != p && self.is_box(s, next.agents[i].0)
            })
            .collect()
    }
}

impl EnvModel for BoxPushing {
    type State = BoxState;

    fn name(&self) -> &'static str {
        "box_pushing"
    }

    fn agent_count(&self) -> usize {
        2
    }

    fn primitive_action_count(&self, _: AgentId) -> usize {
        4
    }

    fn macro_actions(&self, _: AgentId) -> &[MacroAction] {
        &self.macros
    }

    fn observation_dim(&self) -> usize {
        let cells = self.config.rows * self.config.cols;
        2 * cells + 4 + self.config.rows * (1 + self.config.small_boxes.len())
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn discount(&self) -> f64 {
        self.config.gamma
    }

    fn initial_state(&self, _: &mut SimRng) -> BoxState {
        BoxState {
            agents: self
                .config
                .agents
                .iter()
                .map(|a| (Pos::new(a.row, a.col), a.heading))
                .collect(),
            big: self.config.big_box,
            small: self.config.small_boxes.clone(),
        }
    }

    fn transition(&self, s: &BoxState, joint: &[PrimitiveAction], _: &mut SimRng) -> BoxState {
        let (rows, cols) = (self.config.rows, self.config.cols);
        let mut next = s.clone();
        let ahead: Vec<Option<Pos>> = s
            .agents
            .iter()
            .map(|(p, h)| p.step(*h, rows, cols))
            .collect();
        let occupied_by_agent = |p: Pos| s.agents.iter().any(|(q, _)| *q == p);
        let mut moved = vec![false; s.agents.len()];

        // Big box: both halves pushed north in the same step.
        let right_half = Pos::new(s.big.row, s.big.col + 1);
        let big_pushers: Vec<usize> = (0..s.agents.len())
            .filter(|&i| joint[i] == FORWARD && s.agents[i].1 == NORTH)
            .filter(|&i| ahead[i] == Some(s.big) || ahead[i] == Some(right_half))
            .collect();
        if big_pushers.len() == 2 && ahead[big_pushers[0]] != ahead[big_pushers[1]] && s.big.row > 0 {
            let dest = [Pos::new(s.big.row - 1, s.big.col), Pos::new(s.big.row - 1, s.big.col + 1)];
            if dest.iter().all(|d| !self.is_box(s, *d) && !occupied_by_agent(*d)) {
                next.big = dest[0];
                for &i in &big_pushers {
                    next.agents[i].0 = ahead[i].expect("pusher has a cell ahead");
                    moved[i] = true;
                }
            }
        }

        // Small boxes, one agent each.
        for i in 0..s.agents.len() {
            if moved[i] || joint[i] != FORWARD || s.agents[i].1 != NORTH {
                continue;
            }
            let Some(front) = ahead[i] else { continue };
            let Some(b) = s.small.iter().position(|q| *q == front) else {
                continue;
            };
            if next.small[b] != front || front.row == 0 {
                continue;
            }
            let dest = Pos::new(front.row - 1, front.col);
            let dest_free = !self.is_box(&next, dest)
                && !occupied_by_agent(dest)
                && !next.small.contains(&dest);
            if dest_free {
                next.small[b] = dest;
                next.agents[i].0 = front;
                moved[i] = true;
            }
        }

        // Plain moves and turns, resolved in agent order.
        for i in 0..s.agents.len() {
            if moved[i] {
                continue;
            }
            let (_, h) = s.agents[i];
            match joint[i] {
                FORWARD => {
                    if let Some(target) = ahead[i] {
                        let blocked = self.is_box(&next, target)
                            || next
                                .agents
                                .iter()
                                .enumerate()
                                .any(|(j, (q, _))| j != i && *q == target);
                        if !blocked {
                            next.agents[i].0 = target;
                        }
                    }
                }
                TURN_LEFT => next.agents[i].1 = (h + 3) % 4,
                TURN_RIGHT => next.agents[i].1 = (h + 1) % 4,
                _ => {}
            }
        }
        next
    }

    fn reward(&self, s: &BoxState, _: &[PrimitiveAction], next: &BoxState) -> f64 {
        if self.is_terminal(s) {
            return 0.0;
        }
        let mut r = -self.config.step_penalty;
        if next.big.row == 0 {
            r += self.config.big_reward;
        }
        r += self.config.small_reward * next.small.iter().filter(|b| b.row == 0).count() as f64;
        r
    }

    fn events(&self, s: &BoxState, _: &[PrimitiveAction], next: &BoxState) -> Vec<String> {
        let mut ev = Vec::new();
        for _ in self.pushers(s, next) {
            ev.push("push".to_string());
        }
        if next.big != s.big {
            ev.push("push_big".into());
        }
        for (a, b) in s.small.iter().zip(&next.small) {
            if a != b {
                ev.push("push_small".into());
            }
        }
        if next.big.row == 0 {
            ev.push("big_box_goal".into());
        }
        let small_goals = next.small.iter().filter(|b| b.row == 0).count();
        ev.extend(std::iter::repeat_n("small_box_goal".to_string(), small_goals));
        let below_small = |st: &BoxState, p: Pos| st.small.iter().any(|b| Pos::new(b.row + 1, b.col) == p);
        for (i, (p, _)) in next.agents.iter().enumerate() {
            if below_small(next, *p) && !below_small(s, s.agents[i].0) {
                ev.push("reach_small_box".into());
            }
        }
        ev
    }

    fn event_reward(&self, event: &str) -> f64 {
        match event {
            "big_box_goal" => self.config.big_reward,
            "small_box_goal" => self.config.small_reward,
            _ => 0.0,
        }
    }

    fn observe(&self, agent: AgentId, s: &BoxState) -> Vec<f64> {
        let (rows, cols) = (self.config.rows, self.config.cols);
        let cells = rows * cols;
        let (p, h) = s.agents[agent];
        let (q, _) = s.agents[1 - agent];
        let mut o = one_hot(p.row * cols + p.col, cells);
        o.extend(one_hot(h as usize, 4));
        o.extend(one_hot(q.row * cols + q.col, cells));
        o.extend(one_hot(s.big.row, rows));
        for b in &s.small {
            o.extend(one_hot(b.row, rows));
        }
        o
    }

    fn is_terminal(&self, s: &BoxState) -> bool {
        s.big.row == 0 || s.small.iter().any(|b| b.row == 0)
    }

    fn initiable(&self, agent: AgentId, m: MacroId, s: &BoxState, _: &AgentHistory) -> bool {
        if self.is_terminal(s) {
            return false;
        }
        match m {
            GO_TO_BIG_BOX => self.big_box_spot(agent, s).is_some(),
            GO_TO_SMALL_BOX => self.small_box_spot(agent, s).is_some(),
            PUSH => self.facing_box(s, agent),
            3..=6 => true,
            _ => false,
        }
    }

    fn low_level(&self, agent: AgentId, m: MacroId, s: &BoxState, _: &AgentHistory) -> PrimitiveAction {
        match m {
            GO_TO_BIG_BOX => match self.big_box_spot(agent, s) {
                Some(t) => self.navigate(s, agent, t),
                None => STAY,
            },
            GO_TO_SMALL_BOX => match self.small_box_spot(agent, s) {
                Some(t) => self.navigate(s, agent, t),
                None => STAY,
            },
            PUSH | 3 => FORWARD,
            4 => TURN_LEFT,
            5 => TURN_RIGHT,
            _ => STAY,
        }
    }

    fn termination(&self, agent: AgentId, m: MacroId, ctx: &TerminationContext<'_, BoxState>) -> f64 {
        let next = ctx.next;
        let arrived = |spot: Option<Pos>| match spot {
            Some(t) => next.agents[agent] == (t, NORTH),
            None => true,
        };
        let done = match m {
            GO_TO_BIG_BOX => arrived(self.big_box_spot(agent, next)),
            GO_TO_SMALL_BOX => arrived(self.small_box_spot(agent, next)),
            _ => true,
        };
        if done || ctx.elapsed >= self.timeout() {
            1.0
        } else {
            0.0
        }
    }

    fn gate(&self, gate: &str, s: &BoxState) -> bool {
        match gate {
            "near_big_box" => (0..2).any(|i| {
                self.big_box_spot(i, s)
                    .is_some_and(|spot| s.agents.iter().any(|(p, _)| p.manhattan(spot) <= 1))
            }),
            _ => true,
        }
    }

    fn state_repr(&self, s: &BoxState) -> serde_json::Value {
        json!({
            "agents": s.agents.iter().map(|(p, h)| json!([p.row, p.col, h])).collect::<Vec<_>>(),
            "big": [s.big.row, s.big.col],
            "small": s.small.iter().map(|b| json!([b.row, b.col])).collect::<Vec<_>>(),
        })
    }

    fn render(&self, s: &BoxState) -> GridSnapshot {
        let (rows, cols) = (self.config.rows, self.config.cols);
        let cells = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|_| if r == 0 { "goal".to_string() } else { String::new() })
                    .collect()
            })
            .collect();
        let mut items: Vec<ItemView> = self.box_cells(s)[..2]
            .iter()
            .map(|p| ItemView {
                kind: "big_box".into(),
                row: p.row,
                col: p.col,
            })
            .collect();
        items.extend(s.small.iter().map(|p| ItemView {
            kind: "small_box".into(),
            row: p.row,
            col: p.col,
        }));
        GridSnapshot {
            cells,
            agents: s
                .agents
                .iter()
                .enumerate()
                .map(|(id, (p, h))| AgentView {
                    id,
                    row: p.row,
                    col: p.col,
                    heading: Some(HEADINGS[*h as usize].into()),
                    holding: None,
                })
                .collect(),
            items,
        }
    }
}
