//! Episode driver: macro selection, primitive execution, instruction
//! dynamics, compliance tracking and trace recording in one place.
//!
//! Human-injected and sampled instructions share this code path; the only
//! difference is the [`InstructionSource`] handed to [`Rollout::new`].
//! Environment, policy and instruction randomness come from three separate
//! streams derived from one seed, so replacing the instruction source does
//! not perturb the other two.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::compliance::{ComplianceTracker, IssuedInstruction};
use crate::engine::{primitive_step, MacroSegment, RunningMacro, StepHook};
use crate::error::{CoreError, Result};
use crate::instructions::{
    ActiveInstruction, ClassId, InstructionRegistry, InstructionSource, InstructionStep, NULL_CLASS,
};
use crate::model::{AgentHistory, AgentId, EnvModel, MacroId, PrimitiveAction};
use crate::trace::{InstructionView, StepRecord};
use crate::{seeded_rng, SimRng};

/// Chooses a macro for an idle agent.
pub trait MacroSelector {
    fn select(
        &mut self,
        agent: AgentId,
        history: &AgentHistory,
        instruction: &ActiveInstruction,
        mask: &[bool],
        rng: &mut SimRng,
    ) -> Result<MacroId>;
}

impl<F> MacroSelector for F
where
    F: FnMut(AgentId, &AgentHistory, &ActiveInstruction, &[bool], &mut SimRng) -> Result<MacroId>,
{
    fn select(
        &mut self,
        agent: AgentId,
        history: &AgentHistory,
        instruction: &ActiveInstruction,
        mask: &[bool],
        rng: &mut SimRng,
    ) -> Result<MacroId> {
        self(agent, history, instruction, mask, rng)
    }
}

/// A finished macro of one agent, with everything needed for a replay
/// transition `(h, c, h', c', rbar, m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletedMacro {
    pub agent: AgentId,
    pub macro_id: MacroId,
    /// Macros of all agents on the step this one ended.
    pub joint_macros: Vec<MacroId>,
    pub start_step: usize,
    pub duration: usize,
    pub reward: f64,
    pub history_before: AgentHistory,
    pub history_after: AgentHistory,
    pub mask_before: Vec<bool>,
    pub class_before: ClassId,
    pub phrase_before: String,
    pub class_after: ClassId,
    pub phrase_after: String,
    pub interrupted: bool,
    /// The episode ended with this macro.
    pub terminal: bool,
}

#[derive(Clone, Debug)]
struct MacroStart {
    history: AgentHistory,
    mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct RolloutOptions {
    pub seed: u64,
    pub history_window: usize,
    pub record_trace: bool,
    /// Instruction in force at `t = 0`; the null instruction when `None`.
    pub initial_instruction: Option<(ClassId, String)>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            history_window: 8,
            record_trace: true,
            initial_instruction: None,
        }
    }
}

/// Outcome of one primitive step of a rollout.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub t: usize,
    pub reward: f64,
    pub base_reward: f64,
    pub events: Vec<String>,
    pub instruction_changed: bool,
    pub ended_agents: Vec<AgentId>,
    pub segment: Option<MacroSegment>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub steps: usize,
    /// Undiscounted sum of the instruction-conditioned reward.
    pub total_reward: f64,
    pub discounted_reward: f64,
    /// Undiscounted sum of the base task reward.
    pub base_return: f64,
    pub base_discounted: f64,
    pub terminal: bool,
    pub segments: usize,
    pub instructions: Vec<IssuedInstruction>,
}

struct InstructionHook<'a, E: EnvModel> {
    env: &'a E,
    registry: &'a InstructionRegistry,
    active: &'a ActiveInstruction,
    source: &'a mut dyn InstructionSource,
    rng: &'a mut SimRng,
    events: Vec<String>,
    next: Option<InstructionStep>,
}

impl<E: EnvModel> StepHook<E::State> for InstructionHook<'_, E> {
    fn reward(
        &mut self,
        state: &E::State,
        joint: &[PrimitiveAction],
        next: &E::State,
        base: f64,
    ) -> Result<f64> {
        self.events = self.env.events(state, joint, next);
        self.registry
            .instruction_reward(self.active.class_id, base, &self.events, |e| self.env.event_reward(e))
    }

    fn interrupt(
        &mut self,
        step: usize,
        _state: &E::State,
        _joint: &[PrimitiveAction],
        next: &E::State,
    ) -> Result<bool> {
        let env = self.env;
        let gate = |g: &str| env.gate(g, next);
        let out = self.source.next(self.active, step, &gate, self.rng)?;
        let changed = out.transitioned;
        self.next = Some(out);
        Ok(changed)
    }
}

pub struct Rollout<'a, E: EnvModel> {
    env: &'a E,
    registry: &'a InstructionRegistry,
    source: Box<dyn InstructionSource + 'a>,
    state: E::State,
    t: usize,
    histories: Vec<AgentHistory>,
    running: Vec<Option<RunningMacro>>,
    starts: Vec<Option<MacroStart>>,
    instruction: ActiveInstruction,
    env_rng: SimRng,
    policy_rng: SimRng,
    instruction_rng: SimRng,
    tracker: ComplianceTracker,
    record_trace: bool,
    trace: Vec<StepRecord>,
    segment_start: usize,
    segment_reward: f64,
    segments: Vec<MacroSegment>,
    completed: Vec<CompletedMacro>,
    done: bool,
    terminal: bool,
    total_reward: f64,
    discounted_reward: f64,
    base_return: f64,
    base_discounted: f64,
}

impl<'a, E: EnvModel> Rollout<'a, E> {
    pub fn new(
        env: &'a E,
        registry: &'a InstructionRegistry,
        source: Box<dyn InstructionSource + 'a>,
        options: &RolloutOptions,
    ) -> Result<Self> {
        let mut master = seeded_rng(options.seed);
        let mut env_rng = seeded_rng(master.next_u64());
        let policy_rng = seeded_rng(master.next_u64());
        let instruction_rng = seeded_rng(master.next_u64());
        let state = env.initial_state(&mut env_rng);
        let histories = (0..env.agent_count())
            .map(|a| AgentHistory::new(a, options.history_window, env.observe(a, &state)))
            .collect();
        let mut tracker = ComplianceTracker::default();
        let instruction = match &options.initial_instruction {
            Some((class, phrase)) => {
                registry.class(*class)?;
                tracker.switch_to(registry, *class, phrase, 0)?;
                ActiveInstruction::new(*class, phrase.clone())
            }
            None => ActiveInstruction::null(),
        };
        let n = env.agent_count();
        Ok(Self {
            env,
            registry,
            source,
            state,
            t: 0,
            histories,
            running: vec![None; n],
            starts: vec![None; n],
            instruction,
            env_rng,
            policy_rng,
            instruction_rng,
            tracker,
            record_trace: options.record_trace,
            trace: Vec::new(),
            segment_start: 0,
            segment_reward: 0.0,
            segments: Vec::new(),
            completed: Vec::new(),
            done: false,
            terminal: false,
            total_reward: 0.0,
            discounted_reward: 0.0,
            base_return: 0.0,
            base_discounted: 0.0,
        })
    }

    pub fn env(&self) -> &E {
        self.env
    }

    pub fn registry(&self) -> &InstructionRegistry {
        self.registry
    }

    pub fn state(&self) -> &E::State {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn instruction(&self) -> &ActiveInstruction {
        &self.instruction
    }

    pub fn histories(&self) -> &[AgentHistory] {
        &self.histories
    }

    /// Macro each agent is executing, if any.
    pub fn running_macros(&self) -> Vec<Option<MacroId>> {
        self.running
            .iter()
            .map(|m| m.as_ref().map(|m| m.macro_id))
            .collect()
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn segments(&self) -> &[MacroSegment] {
        &self.segments
    }

    pub fn compliance(&self) -> &ComplianceTracker {
        &self.tracker
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    pub fn base_return(&self) -> f64 {
        self.base_return
    }

    /// Takes the macros finished since the last call.
    pub fn drain_completed(&mut self) -> Vec<CompletedMacro> {
        std::mem::take(&mut self.completed)
    }

    /// Queues an instruction on the source; it takes effect at the end of
    /// the next primitive step, exactly like a sampled arrival.
    pub fn queue_instruction(&mut self, class: ClassId, phrase: String) -> Result<bool> {
        self.registry.class(class)?;
        Ok(self.source.queue(class, phrase))
    }

    /// Selects macros for every idle agent. Idempotent.
    pub fn prepare(&mut self, selector: &mut dyn MacroSelector) -> Result<()> {
        if self.done {
            return Ok(());
        }
        for agent in 0..self.env.agent_count() {
            if self.running[agent].is_some() {
                continue;
            }
            let history = &self.histories[agent];
            let mask = self.env.initiation_mask(agent, &self.state, history);
            if !mask.iter().any(|&m| m) {
                return Err(CoreError::Config(format!(
                    "agent {agent} has no initiable macro at step {}",
                    self.t
                )));
            }
            let choice = selector.select(agent, history, &self.instruction, &mask, &mut self.policy_rng)?;
            let started = RunningMacro::start(self.env, agent, choice, &self.state, history, self.t)?;
            self.running[agent] = Some(started);
            self.starts[agent] = Some(MacroStart {
                history: history.clone(),
                mask,
            });
        }
        Ok(())
    }

    /// Executes one primitive step.
    pub fn step(&mut self, selector: &mut dyn MacroSelector) -> Result<StepReport> {
        if self.done {
            return Err(CoreError::EpisodeFinished);
        }
        self.prepare(selector)?;
        let gamma = self.env.discount();
        let joint_macros: Vec<MacroId> = self
            .running
            .iter()
            .map(|m| m.as_ref().map(|m| m.macro_id).unwrap_or(usize::MAX))
            .collect();
        let pre_obs: Vec<Vec<f64>> = if self.record_trace {
            (0..self.env.agent_count())
                .map(|a| self.env.observe(a, &self.state))
                .collect()
        } else {
            Vec::new()
        };

        let mut hook = InstructionHook {
            env: self.env,
            registry: self.registry,
            active: &self.instruction,
            source: self.source.as_mut(),
            rng: &mut self.instruction_rng,
            events: Vec::new(),
            next: None,
        };
        let out = primitive_step(
            self.env,
            &self.state,
            self.t,
            &mut self.histories,
            &mut self.running,
            &mut hook,
            &mut self.env_rng,
        )?;
        let events = std::mem::take(&mut hook.events);
        let next_instruction = hook.next.take();

        if self.record_trace {
            self.trace.push(StepRecord {
                t: self.t,
                state_repr: self.env.state_repr(&self.state),
                joint_primitive: out.joint.clone(),
                reward: out.reward,
                per_agent_obs: pre_obs,
                active_instruction: InstructionView {
                    class_id: self.instruction.class_id,
                    phrase: self.instruction.phrase.clone(),
                },
                segment_id: self.segments.len(),
                base_reward: out.base_reward,
                events: events.clone(),
                macros: joint_macros.clone(),
            });
        }
        self.tracker.record_step(&events);

        let discount = gamma.powi(self.t as i32);
        self.total_reward += out.reward;
        self.discounted_reward += discount * out.reward;
        self.base_return += out.base_reward;
        self.base_discounted += discount * out.base_reward;
        self.segment_reward += gamma.powi((self.t - self.segment_start) as i32) * out.reward;

        let before = self.instruction.clone();
        let mut changed = false;
        if let Some(next) = next_instruction {
            if next.transitioned {
                changed = true;
                self.tracker
                    .switch_to(self.registry, next.class_id, &next.phrase, self.t + 1)?;
                self.instruction = ActiveInstruction::new(next.class_id, next.phrase);
            } else if self.instruction.class_id != NULL_CLASS {
                self.instruction.steps_active += 1;
            }
        }

        let mut ended_agents = Vec::with_capacity(out.ended.len());
        for (agent, finished) in &out.ended {
            let start = self.starts[*agent]
                .take()
                .expect("every running macro has a recorded start");
            self.completed.push(CompletedMacro {
                agent: *agent,
                macro_id: finished.macro_id,
                joint_macros: joint_macros.clone(),
                start_step: finished.start_step,
                duration: finished.elapsed,
                reward: finished.accumulated_reward,
                history_before: start.history,
                history_after: self.histories[*agent].clone(),
                mask_before: start.mask,
                class_before: before.class_id,
                phrase_before: before.phrase.clone(),
                class_after: self.instruction.class_id,
                phrase_after: self.instruction.phrase.clone(),
                interrupted: out.interrupted,
                terminal: out.episode_done,
            });
            ended_agents.push(*agent);
        }

        let segment = if ended_agents.is_empty() {
            None
        } else {
            let seg = MacroSegment {
                start_step: self.segment_start,
                duration: self.t + 1 - self.segment_start,
                accumulated_reward: self.segment_reward,
                terminated_agents: ended_agents.iter().copied().collect(),
                interrupted: out.interrupted,
            };
            self.segments.push(seg.clone());
            self.segment_start = self.t + 1;
            self.segment_reward = 0.0;
            Some(seg)
        };

        let t = self.t;
        self.t += 1;
        self.state = out.next_state;
        if out.episode_done {
            self.done = true;
            self.terminal = out.terminal;
            self.tracker.finish();
        }
        Ok(StepReport {
            t,
            reward: out.reward,
            base_reward: out.base_reward,
            events,
            instruction_changed: changed,
            ended_agents,
            segment,
            done: self.done,
        })
    }

    /// Runs primitive steps until the next segment boundary.
    pub fn run_macro_step(&mut self, selector: &mut dyn MacroSelector) -> Result<MacroSegment> {
        loop {
            let report = self.step(selector)?;
            if let Some(seg) = report.segment {
                return Ok(seg);
            }
        }
    }

    pub fn run_episode(&mut self, selector: &mut dyn MacroSelector) -> Result<EpisodeSummary> {
        while !self.done {
            self.step(selector)?;
        }
        Ok(self.summary())
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            steps: self.t,
            total_reward: self.total_reward,
            discounted_reward: self.discounted_reward,
            base_return: self.base_return,
            base_discounted: self.base_discounted,
            terminal: self.terminal,
            segments: self.segments.len(),
            instructions: self.tracker.resolved().to_vec(),
        }
    }
}

/// Uniformly random choice among initiable macros.
pub fn uniform_selector(
    _agent: AgentId,
    _history: &AgentHistory,
    _instruction: &ActiveInstruction,
    mask: &[bool],
    rng: &mut SimRng,
) -> Result<MacroId> {
    use rand::Rng;
    let options: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &ok)| ok.then_some(i))
        .collect();
    Ok(options[rng.random_range(0..options.len())])
}
