//! Execution of joint macro-actions over primitive steps.
//!
//! Termination is asynchronous: a segment boundary is recorded whenever any
//! agent's macro ends, but only the agents whose macro ended are re-queried.
//! An instruction transition reported by the [`StepHook`] ends every running
//! macro at once, and in that case no termination function is sampled.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{AgentHistory, AgentId, EnvModel, MacroId, PrimitiveAction, TerminationContext};
use crate::SimRng;

/// A macro currently executing for one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningMacro {
    pub macro_id: MacroId,
    pub start_step: usize,
    /// Primitive steps executed so far.
    pub elapsed: usize,
    /// Discounted within-macro reward, `sum_k gamma^k r_{start + k}`.
    pub accumulated_reward: f64,
}

impl RunningMacro {
    /// Starts `macro_id` for `agent`, checking its initiation set.
    pub fn start<E: EnvModel>(
        env: &E,
        agent: AgentId,
        macro_id: MacroId,
        state: &E::State,
        history: &AgentHistory,
        step: usize,
    ) -> Result<Self> {
        if macro_id >= env.macro_count(agent) || !env.initiable(agent, macro_id, state, history) {
            return Err(not_initiable(env, agent, macro_id));
        }
        Ok(Self {
            macro_id,
            start_step: step,
            elapsed: 0,
            accumulated_reward: 0.0,
        })
    }
}

fn not_initiable<E: EnvModel>(env: &E, agent: AgentId, macro_id: MacroId) -> CoreError {
    CoreError::NotInitiable {
        agent,
        macro_id,
        name: env
            .macro_actions(agent)
            .get(macro_id)
            .map(|m| m.name.clone())
            .unwrap_or_else(|| "<out of range>".into()),
    }
}

/// One joint macro segment between two consecutive boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroSegment {
    pub start_step: usize,
    pub duration: usize,
    /// `sum_{k < duration} gamma^k r_{start_step + k}`.
    pub accumulated_reward: f64,
    pub terminated_agents: BTreeSet<AgentId>,
    /// Ended by an instruction transition rather than a termination function.
    pub interrupted: bool,
}

/// Per-step callbacks: instruction-conditioned reward and the interrupt check.
pub trait StepHook<S> {
    /// Reward accumulated into segments; defaults to the base reward.
    fn reward(&mut self, _state: &S, _joint: &[PrimitiveAction], _next: &S, base: f64) -> Result<f64> {
        Ok(base)
    }

    /// Returns true when an instruction transition occurred on this step.
    /// Not called on the step that ends the episode.
    fn interrupt(
        &mut self,
        _step: usize,
        _state: &S,
        _joint: &[PrimitiveAction],
        _next: &S,
    ) -> Result<bool> {
        Ok(false)
    }
}

/// Base reward, never interrupts.
pub struct NoHook;

impl<S> StepHook<S> for NoHook {}

/// Adapts a plain closure into an interrupt check.
pub struct InterruptFn<F>(pub F);

impl<S, F> StepHook<S> for InterruptFn<F>
where
    F: FnMut(usize) -> bool,
{
    fn interrupt(&mut self, step: usize, _: &S, _: &[PrimitiveAction], _: &S) -> Result<bool> {
        Ok((self.0)(step))
    }
}

/// Outcome of a single primitive step.
#[derive(Clone, Debug)]
pub struct PrimitiveStep<S> {
    pub step: usize,
    pub joint: Vec<PrimitiveAction>,
    pub base_reward: f64,
    pub reward: f64,
    pub next_state: S,
    pub interrupted: bool,
    /// Agents whose macro ended on this step, with the finished macro.
    pub ended: Vec<(AgentId, RunningMacro)>,
    pub episode_done: bool,
    /// True when the episode ended because the state is terminal (as opposed
    /// to the horizon running out).
    pub terminal: bool,
}

/// Executes one primitive step of the running joint macro.
///
/// Macros with `elapsed == 0` have their initiation set checked first.
/// On return, `running` holds `None` for every agent whose macro ended.
pub fn primitive_step<E: EnvModel>(
    env: &E,
    state: &E::State,
    step: usize,
    histories: &mut [AgentHistory],
    running: &mut [Option<RunningMacro>],
    hook: &mut dyn StepHook<E::State>,
    rng: &mut SimRng,
) -> Result<PrimitiveStep<E::State>> {
    if env.is_terminal(state) {
        return Err(CoreError::TerminalState);
    }
    let n = env.agent_count();
    let gamma = env.discount();

    let mut joint = Vec::with_capacity(n);
    for agent in 0..n {
        let current = running[agent]
            .as_ref()
            .ok_or_else(|| CoreError::Config(format!("agent {agent} has no running macro")))?;
        if current.elapsed == 0
            && !env.initiable(agent, current.macro_id, state, &histories[agent])
        {
            return Err(not_initiable(env, agent, current.macro_id));
        }
        joint.push(env.low_level(agent, current.macro_id, state, &histories[agent]));
    }

    let next = env.transition(state, &joint, rng);
    let base_reward = env.reward(state, &joint, &next);
    let reward = hook.reward(state, &joint, &next, base_reward)?;

    for agent in 0..n {
        if let Some(m) = running[agent].as_mut() {
            m.accumulated_reward += gamma.powi(m.elapsed as i32) * reward;
            m.elapsed += 1;
        }
        histories[agent].push_primitive(env.observe(agent, &next), joint[agent]);
    }

    let terminal = env.is_terminal(&next);
    let episode_done = terminal || step + 1 >= env.horizon();
    let interrupted = if episode_done {
        false
    } else {
        hook.interrupt(step, state, &joint, &next)?
    };

    let mut ended = Vec::new();
    for agent in 0..n {
        let fire = if interrupted || episode_done {
            true
        } else {
            let m = running[agent].as_ref().expect("checked above");
            let ctx = TerminationContext {
                previous: state,
                next: &next,
                elapsed: m.elapsed,
                history: &histories[agent],
            };
            let beta = env.termination(agent, m.macro_id, &ctx).clamp(0.0, 1.0);
            if beta <= 0.0 {
                false
            } else if beta >= 1.0 {
                true
            } else {
                rng.random_bool(beta)
            }
        };
        if fire {
            let finished = running[agent].take().expect("checked above");
            histories[agent].push_macro(env.observe(agent, &next), finished.macro_id);
            ended.push((agent, finished));
        }
    }

    Ok(PrimitiveStep {
        step,
        joint,
        base_reward,
        reward,
        next_state: next,
        interrupted,
        ended,
        episode_done,
        terminal,
    })
}

/// Result of [`run_macro_step`].
#[derive(Clone, Debug)]
pub struct MacroStepResult<S> {
    pub segment: MacroSegment,
    pub next_state: S,
    pub next_step: usize,
    pub ended: Vec<(AgentId, RunningMacro)>,
    pub episode_done: bool,
    /// Per-primitive rewards inside the segment, in order.
    pub rewards: Vec<f64>,
}

/// Runs primitives from the joint macro until any macro ends, an
/// instruction transition interrupts, or the episode ends.
pub fn run_macro_step<E: EnvModel>(
    env: &E,
    state: &E::State,
    step: usize,
    histories: &mut [AgentHistory],
    running: &mut [Option<RunningMacro>],
    hook: &mut dyn StepHook<E::State>,
    rng: &mut SimRng,
) -> Result<MacroStepResult<E::State>> {
    let gamma = env.discount();
    let mut current = state.clone();
    let mut t = step;
    let mut rewards = Vec::new();
    let mut accumulated = 0.0;
    loop {
        let out = primitive_step(env, &current, t, histories, running, hook, rng)?;
        accumulated += gamma.powi(rewards.len() as i32) * out.reward;
        rewards.push(out.reward);
        t += 1;
        current = out.next_state;
        if !out.ended.is_empty() {
            let segment = MacroSegment {
                start_step: step,
                duration: rewards.len(),
                accumulated_reward: accumulated,
                terminated_agents: out.ended.iter().map(|(a, _)| *a).collect(),
                interrupted: out.interrupted,
            };
            return Ok(MacroStepResult {
                segment,
                next_state: current,
                next_step: t,
                ended: out.ended,
                episode_done: out.episode_done,
                rewards,
            });
        }
    }
}

/// `sum_t gamma^t r_t` over a primitive reward trace.
pub fn joint_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// `sum_segments gamma^start * rbar`, which equals [`joint_return`] of the
/// underlying primitive trace.
pub fn segments_return(segments: &[MacroSegment], gamma: f64) -> f64 {
    segments
        .iter()
        .map(|s| gamma.powi(s.start_step as i32) * s.accumulated_reward)
        .sum()
}
