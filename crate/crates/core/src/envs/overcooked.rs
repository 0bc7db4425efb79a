//! A 7x7 kitchen shared by three cooks and one scripted human.
//!
//! Stations sit in the outer wall; the 5x5 interior is floor. A cook picks
//! an ingredient from a bin, which assigns it the first recipe using that
//! ingredient, then carries it through the recipe's station sequence and
//! finally to the delivery hatch. Each correct station use pays a small
//! reward, delivery pays a bonus, and every step costs a little time.
//!
//! The human wanders the floor at random and blocks the cell it stands on.

use rand::Rng;
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

pub const GRID: usize = 7;
pub const UP: PrimitiveAction = 0;
pub const DOWN: PrimitiveAction = 1;
pub const LEFT: PrimitiveAction = 2;
pub const RIGHT: PrimitiveAction = 3;
pub const STAY: PrimitiveAction = 4;
pub const INTERACT: PrimitiveAction = 5;
const PRIMITIVES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Station {
    TomatoBin,
    LettuceBin,
    CuttingBoardLeft,
    CuttingBoardRight,
    Blender,
    Oven,
    Delivery,
}

impl Station {
    pub const ALL: [Station; 7] = [
        Station::TomatoBin,
        Station::LettuceBin,
        Station::CuttingBoardLeft,
        Station::CuttingBoardRight,
        Station::Blender,
        Station::Oven,
        Station::Delivery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Station::TomatoBin => "tomato_bin",
            Station::LettuceBin => "lettuce_bin",
            Station::CuttingBoardLeft => "cutting_board_left",
            Station::CuttingBoardRight => "cutting_board_right",
            Station::Blender => "blender",
            Station::Oven => "oven",
            Station::Delivery => "delivery",
        }
    }

    /// Position in the outer wall.
    pub fn pos(self) -> Pos {
        match self {
            Station::TomatoBin => Pos::new(0, 1),
            Station::LettuceBin => Pos::new(0, 3),
            Station::Delivery => Pos::new(0, 5),
            Station::CuttingBoardLeft => Pos::new(2, 0),
            Station::CuttingBoardRight => Pos::new(2, 6),
            Station::Blender => Pos::new(4, 0),
            Station::Oven => Pos::new(4, 6),
        }
    }

    /// Interior cell from which the station is used.
    pub fn access(self) -> Pos {
        let p = self.pos();
        match (p.row, p.col) {
            (0, c) => Pos::new(1, c),
            (r, 0) => Pos::new(r, 1),
            (r, _) => Pos::new(r, GRID - 2),
        }
    }

    /// Processing kind; both boards count as a cutting board.
    fn kind(self) -> &'static str {
        match self {
            Station::CuttingBoardLeft | Station::CuttingBoardRight => "board",
            Station::Blender => "blender",
            Station::Oven => "oven",
            _ => "",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: String,
    /// "tomato" or "lettuce".
    pub ingredient: String,
    /// Processing kinds in order: "board", "blender", "oven".
    pub steps: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OvercookedConfig {
    pub recipes: Vec<Recipe>,
    pub step_reward: f64,
    pub delivery_reward: f64,
    pub time_penalty: f64,
    pub restriction_penalty: f64,
    pub fetch_bonus: f64,
    pub move_bonus: f64,
    pub move_budget: usize,
    pub mean_duration: u32,
    pub gamma: f64,
    pub horizon: usize,
    pub human_move_prob: f64,
}

impl Default for OvercookedConfig {
    fn default() -> Self {
        Self {
            recipes: vec![
                Recipe {
                    name: "tomato_soup".into(),
                    ingredient: "tomato".into(),
                    steps: vec!["board".into(), "oven".into()],
                },
                Recipe {
                    name: "lettuce_smoothie".into(),
                    ingredient: "lettuce".into(),
                    steps: vec!["board".into(), "blender".into()],
                },
            ],
            step_reward: 5.0,
            delivery_reward: 20.0,
            time_penalty: 0.1,
            restriction_penalty: 50.0,
            fetch_bonus: 10.0,
            move_bonus: 1.0,
            move_budget: 5,
            mean_duration: 20,
            gamma: 0.99,
            horizon: 100,
            human_move_prob: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dish {
    pub recipe: usize,
    /// Recipe steps completed so far.
    pub progress: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KitchenState {
    pub cooks: Vec<Pos>,
    pub holding: Vec<Option<Dish>>,
    pub human: Pos,
    pub delivered: usize,
}

#[derive(Clone, Debug)]
pub struct Overcooked {
    config: OvercookedConfig,
    macros: Vec<MacroAction>,
}

const COOKS: usize = 3;

impl Overcooked {
    pub fn new(config: OvercookedConfig) -> Result<Self> {
        if config.recipes.is_empty() {
            return Err(CoreError::Config("at least one recipe is required".into()));
        }
        for r in &config.recipes {
            if !matches!(r.ingredient.as_str(), "tomato" | "lettuce") {
                return Err(CoreError::Config(format!("unknown ingredient `{}`", r.ingredient)));
            }
            if let Some(s) = r.steps.iter().find(|s| !matches!(s.as_str(), "board" | "blender" | "oven")) {
                return Err(CoreError::Config(format!("unknown recipe step `{s}`")));
            }
        }
        if !(0.0..=1.0).contains(&config.gamma) || config.horizon == 0 {
            return Err(CoreError::Config("gamma must be in [0,1], horizon positive".into()));
        }
        let mut macros: Vec<MacroAction> = Station::ALL
            .iter()
            .enumerate()
            .map(|(i, s)| MacroAction::new(i, format!("Use({})", s.name())))
            .collect();
        for (a, name) in ["Up", "Down", "Left", "Right", "Stay", "Interact"].iter().enumerate() {
            macros.push(MacroAction::primitive(Station::ALL.len() + a, *name, a));
        }
        Ok(Self { config, macros })
    }

    pub fn config(&self) -> &OvercookedConfig {
        &self.config
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (GRID, GRID)
    }

    pub fn registry(&self) -> InstructionRegistry {
        let c = &self.config;
        let restrict = |id, name: &str, phrases: &[&str], event: &str| InstructionClass {
            class_id: id,
            name: name.into(),
            phrases: phrases.iter().map(|p| p.to_string()).collect(),
            reward_spec: RewardSpec::PenaltyOnEvent {
                event: event.into(),
                amount: -c.restriction_penalty,
            },
            mean_duration: c.mean_duration,
            gating: None,
            compliance: Some(ComplianceRule::Avoid { event: event.into() }),
        };
        InstructionRegistry::new(vec![
            InstructionClass::null(),
            restrict(
                1,
                "no-left-board",
                &["don't use the left cutting board", "stay off the left cutting board"],
                "use_left_board",
            ),
            restrict(2, "no-tomato", &["don't get the tomato", "leave the tomatoes alone"], "get_tomato"),
            InstructionClass {
                class_id: 3,
                name: "fetch-lettuce".into(),
                phrases: vec!["get me the lettuce".into(), "bring me some lettuce".into()],
                reward_spec: RewardSpec::BonusOnEvent {
                    event: "get_lettuce".into(),
                    amount: c.fetch_bonus,
                },
                mean_duration: c.mean_duration,
                gating: None,
                compliance: Some(ComplianceRule::Achieve {
                    event: "get_lettuce".into(),
                }),
            },
            InstructionClass {
                class_id: 4,
                name: "move-left".into(),
                phrases: vec!["move left".into(), "go left".into()],
                reward_spec: RewardSpec::BonusOnEvent {
                    event: "move_left".into(),
                    amount: c.move_bonus,
                },
                mean_duration: c.mean_duration,
                gating: None,
                compliance: Some(ComplianceRule::AchieveWithin {
                    event: "move_left".into(),
                    budget: c.move_budget,
                }),
            },
        ])
        .expect("kitchen registry is valid")
    }

    fn is_floor(p: Pos) -> bool {
        p.row > 0 && p.row < GRID - 1 && p.col > 0 && p.col < GRID - 1
    }

    fn station_at(p: Pos) -> Option<Station> {
        Station::ALL.iter().copied().find(|s| s.pos() == p)
    }

    /// Station a cook at `p` interacts with: the first adjacent one in the
    /// order up, right, down, left.
    fn adjacent_station(p: Pos) -> Option<Station> {
        (0..4).find_map(|d| p.step(d, GRID, GRID).and_then(Self::station_at))
    }

    fn recipe_for(&self, ingredient: &str) -> Option<usize> {
        self.config.recipes.iter().position(|r| r.ingredient == ingredient)
    }

    fn dish_ready(&self, d: &Dish) -> bool {
        d.progress >= self.config.recipes[d.recipe].steps.len()
    }

    /// Outcome of `INTERACT` for cook `i`: the new holding, the event names
    /// and whether a recipe step was completed.
    fn interact(&self, station: Station, holding: &Option<Dish>) -> (Option<Dish>, Vec<String>, bool, bool) {
        let mut events = Vec::new();
        if station == Station::CuttingBoardLeft {
            events.push("use_left_board".to_string());
        }
        match (station, holding) {
            (Station::TomatoBin, None) => {
                events.push("get_tomato".into());
                let dish = self.recipe_for("tomato").map(|recipe| Dish { recipe, progress: 0 });
                (dish, events, false, false)
            }
            (Station::LettuceBin, None) => {
                events.push("get_lettuce".into());
                let dish = self.recipe_for("lettuce").map(|recipe| Dish { recipe, progress: 0 });
                (dish, events, false, false)
            }
            (Station::Delivery, Some(d)) if self.dish_ready(d) => {
                events.push("deliver".into());
                (None, events, false, true)
            }
            (s, Some(d)) if !s.kind().is_empty() => {
                let steps = &self.config.recipes[d.recipe].steps;
                if d.progress < steps.len() && steps[d.progress] == s.kind() {
                    events.push("correct_step".into());
                    let next = Dish {
                        recipe: d.recipe,
                        progress: d.progress + 1,
                    };
                    (Some(next), events, true, false)
                } else {
                    (holding.clone(), events, false, false)
                }
            }
            _ => (holding.clone(), events, false, false),
        }
    }

    fn moved(a: PrimitiveAction) -> Option<u8> {
        match a {
            UP => Some(0),
            RIGHT => Some(1),
            DOWN => Some(2),
            LEFT => Some(3),
            _ => None,
        }
    }

    fn apply(&self, s: &KitchenState, joint: &[PrimitiveAction]) -> (KitchenState, Vec<String>, f64) {
        let mut next = s.clone();
        let mut events = Vec::new();
        let mut reward = 0.0;
        for i in 0..COOKS {
            if joint[i] == INTERACT {
                if let Some(station) = Self::adjacent_station(s.cooks[i]) {
                    let (holding, ev, step, delivered) = self.interact(station, &s.holding[i]);
                    next.holding[i] = holding;
                    events.extend(ev);
                    if step {
                        reward += self.config.step_reward;
                    }
                    if delivered {
                        reward += self.config.delivery_reward;
                        next.delivered += 1;
                    }
                }
            } else if let Some(dir) = Self::moved(joint[i]) {
                let Some(target) = s.cooks[i].step(dir, GRID, GRID) else {
                    continue;
                };
                let taken = target == next.human
                    || next.cooks.iter().enumerate().any(|(j, q)| j != i && *q == target);
                if Self::is_floor(target) && !taken {
                    next.cooks[i] = target;
                    if dir == 3 {
                        events.push("move_left".into());
                    }
                }
            }
        }
        (next, events, reward)
    }

    fn navigate(&self, s: &KitchenState, agent: AgentId, station: Station) -> PrimitiveAction {
        let here = s.cooks[agent];
        let goal = station.access();
        if here == goal {
            return INTERACT;
        }
        let blocked = |p: Pos| {
            !Self::is_floor(p) || p == s.human || s.cooks.iter().enumerate().any(|(j, q)| j != agent && *q == p)
        };
        let next = grid::next_cell(GRID, GRID, here, goal, &blocked).or_else(|| {
            let walls = |p: Pos| !Self::is_floor(p);
            grid::next_cell(GRID, GRID, here, goal, &walls)
        });
        match next.and_then(|n| here.direction_to(n)) {
            Some(0) => UP,
            Some(1) => RIGHT,
            Some(2) => DOWN,
            Some(3) => LEFT,
            _ => STAY,
        }
    }
}

impl EnvModel for Overcooked {
    type State = KitchenState;

    fn name(&self) -> &'static str {
        "overcooked"
    }

    fn agent_count(&self) -> usize {
        COOKS
    }

    fn primitive_action_count(&self, _: AgentId) -> usize {
        PRIMITIVES
    }

    fn macro_actions(&self, _: AgentId) -> &[MacroAction] {
        &self.macros
    }

    fn observation_dim(&self) -> usize {
        // own cell, others' cells, human cell, holding (recipe, progress).
        let cells = GRID * GRID;
        cells * (COOKS + 1) + self.config.recipes.len() + 1 + 4
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn discount(&self) -> f64 {
        self.config.gamma
    }

    fn initial_state(&self, _: &mut SimRng) -> KitchenState {
        KitchenState {
            cooks: vec![Pos::new(3, 1), Pos::new(3, 3), Pos::new(3, 5)],
            holding: vec![None; COOKS],
            human: Pos::new(5, 3),
            delivered: 0,
        }
    }

    fn transition(&self, s: &KitchenState, joint: &[PrimitiveAction], rng: &mut SimRng) -> KitchenState {
        let (mut next, _, _) = self.apply(s, joint);
        if rng.random_bool(self.config.human_move_prob) {
            let dir = rng.random_range(0..4u8);
            if let Some(t) = next.human.step(dir, GRID, GRID) {
                if Self::is_floor(t) && !next.cooks.contains(&t) {
                    next.human = t;
                }
            }
        }
        next
    }

    fn reward(&self, s: &KitchenState, joint: &[PrimitiveAction], _: &KitchenState) -> f64 {
        let (_, _, r) = self.apply(s, joint);
        r - self.config.time_penalty
    }

    fn events(&self, s: &KitchenState, joint: &[PrimitiveAction], _: &KitchenState) -> Vec<String> {
        self.apply(s, joint).1
    }

    fn event_reward(&self, event: &str) -> f64 {
        match event {
            "correct_step" => self.config.step_reward,
            "deliver" => self.config.delivery_reward,
            _ => 0.0,
        }
    }

    fn observe(&self, agent: AgentId, s: &KitchenState) -> Vec<f64> {
        let cells = GRID * GRID;
        let idx = |p: Pos| p.row * GRID + p.col;
        let mut o = one_hot(idx(s.cooks[agent]), cells);
        for j in (0..COOKS).filter(|&j| j != agent) {
            o.extend(one_hot(idx(s.cooks[j]), cells));
        }
        o.extend(one_hot(idx(s.human), cells));
        let recipes = self.config.recipes.len();
        match &s.holding[agent] {
            Some(d) => {
                o.extend(one_hot(d.recipe, recipes + 1));
                o.extend(one_hot(d.progress.min(3), 4));
            }
            None => {
                o.extend(one_hot(recipes, recipes + 1));
                o.extend(vec![0.0; 4]);
            }
        }
        o
    }

    fn is_terminal(&self, _: &KitchenState) -> bool {
        false
    }

    fn initiable(&self, _: AgentId, m: MacroId, _: &KitchenState, _: &AgentHistory) -> bool {
        m < self.macros.len()
    }

    fn low_level(&self, agent: AgentId, m: MacroId, s: &KitchenState, _: &AgentHistory) -> PrimitiveAction {
        if m < Station::ALL.len() {
            self.navigate(s, agent, Station::ALL[m])
        } else {
            m - Station::ALL.len()
        }
    }

    fn termination(&self, agent: AgentId, m: MacroId, ctx: &TerminationContext<'_, KitchenState>) -> f64 {
        if m >= Station::ALL.len() {
            return 1.0;
        }
        // A station macro ends once the cook interacted at the station.
        let at = ctx.previous.cooks[agent] == Station::ALL[m].access();
        if at || ctx.elapsed >= 4 * GRID {
            1.0
        } else {
            0.0
        }
    }

    fn state_repr(&self, s: &KitchenState) -> serde_json::Value {
        json!({
            "cooks": s.cooks.iter().map(|p| json!([p.row, p.col])).collect::<Vec<_>>(),
            "holding": s.holding,
            "human": [s.human.row, s.human.col],
            "delivered": s.delivered,
        })
    }

    fn render(&self, s: &KitchenState) -> GridSnapshot {
        let cells = (0..GRID)
            .map(|r| {
                (0..GRID)
                    .map(|c| {
                        let p = Pos::new(r, c);
                        match Self::station_at(p) {
                            Some(st) => st.name().to_string(),
                            None if Self::is_floor(p) => String::new(),
                            None => "wall".to_string(),
                        }
                    })
                    .collect()
            })
            .collect();
        let agents = s
            .cooks
            .iter()
            .enumerate()
            .map(|(id, p)| AgentView {
                id,
                row: p.row,
                col: p.col,
                heading: None,
                holding: s.holding[id].as_ref().map(|d| {
                    format!("{}:{}", self.config.recipes[d.recipe].name, d.progress)
                }),
            })
            .collect();
        GridSnapshot {
            cells,
            agents,
            items: vec![ItemView {
                kind: "human".into(),
                row: s.human.row,
                col: s.human.col,
            }],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stations_have_floor_access() {
        for s in Station::ALL {
            assert!(Overcooked::is_floor(s.access()), "{s:?}");
            assert_eq!(Overcooked::adjacent_station(s.access()), Some(s));
        }
    }
}
