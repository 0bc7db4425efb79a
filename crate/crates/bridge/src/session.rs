//! One interactive episode driven by a trained policy.

use std::sync::atomic::{AtomicU64, Ordering};

use mavic_core::instructions::{InstructionRegistry, ManualQueue, NULL_CLASS};
use mavic_core::model::EnvModel;
use mavic_core::rollout::{Rollout, RolloutOptions};
use mavic_core::trace::StepRecord;
use mavic_learner::policy::PolicySelector;
use mavic_learner::Policy;

use crate::protocol::{Ack, ClassInfo, ComplianceCounts, ErrorCode, Frame, InstructionInfo, ServerMessage, Status};

pub const DEFAULT_TICK_RATE: f64 = 4.0;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> String {
    let n = NEXT_ID.fetch_add(1, Ordering::Relaxed);
    let pid = u64::from(std::process::id());
    format!("s{:x}-{n}", pid.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40)
}

/// Transport commands accepted by [`Session::control`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Play,
    Pause,
    Step,
    Reset,
    Close,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "play" => Command::Play,
            "pause" => Command::Pause,
            "step" => Command::Step,
            "reset" => Command::Reset,
            "close" => Command::Close,
            _ => return None,
        })
    }
}

/// Failure of a session command, sent to the client as an error message.
#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub code: ErrorCode,
    pub message: String,
}

impl Rejection {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn into_message(self) -> ServerMessage {
        ServerMessage::error(self.code, self.message)
    }
}

type Outcome<T> = std::result::Result<T, Rejection>;

fn internal(e: impl std::fmt::Display) -> Rejection {
    Rejection::new(ErrorCode::Internal, e.to_string())
}

/// Instructions come from a [`ManualQueue`], so an injected phrase takes
/// effect at the next step boundary and forces every running macro to end,
/// the same path a sampled arrival takes during training.
pub struct Session<'a, E: EnvModel> {
    id: String,
    env: &'a E,
    registry: &'a InstructionRegistry,
    policy: &'a Policy,
    seed: u64,
    tick_rate: f64,
    status: Status,
    episode: u64,
    rollout: Rollout<'a, E>,
    selector: PolicySelector<'a>,
    pending: Option<String>,
    last_events: Vec<String>,
    last_ended: Vec<usize>,
    last_interrupted: bool,
}

impl<'a, E: EnvModel> Session<'a, E> {
    /// Opens a paused session at `t = 0`.
    pub fn open(
        env: &'a E,
        registry: &'a InstructionRegistry,
        policy: &'a Policy,
        seed: u64,
        greedy: bool,
        tick_rate: Option<f64>,
    ) -> Outcome<Self> {
        if policy.shape.env != env.name() {
            return Err(Rejection::new(
                ErrorCode::BadCheckpoint,
                format!("checkpoint was trained on `{}`, session env is `{}`", policy.shape.env, env.name()),
            ));
        }
        let tick_rate = tick_rate.unwrap_or(DEFAULT_TICK_RATE);
        if !(tick_rate.is_finite() && tick_rate > 0.0) {
            return Err(Rejection::new(ErrorCode::BadMessage, "tick_rate must be positive"));
        }
        let rollout = Self::fresh_rollout(env, registry, policy, seed)?;
        let mut session = Self {
            id: fresh_id(),
            env,
            registry,
            policy,
            seed,
            tick_rate,
            status: Status::Paused,
            episode: 0,
            rollout,
            selector: policy.selector(greedy),
            pending: None,
            last_events: Vec::new(),
            last_ended: Vec::new(),
            last_interrupted: false,
        };
        session.prepare()?;
        Ok(session)
    }

    fn fresh_rollout(env: &'a E, registry: &'a InstructionRegistry, policy: &Policy, seed: u64) -> Outcome<Rollout<'a, E>> {
        let options = RolloutOptions {
            seed,
            history_window: policy.shape.history_window,
            record_trace: true,
            initial_instruction: None,
        };
        Rollout::new(env, registry, Box::new(ManualQueue::default()), &options).map_err(internal)
    }

    fn prepare(&mut self) -> Outcome<()> {
        self.rollout.prepare(&mut self.selector).map_err(internal)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn tick_rate(&self) -> f64 {
        self.tick_rate
    }

    pub fn t(&self) -> usize {
        self.rollout.t()
    }

    /// Per-step trace of the current episode.
    pub fn trace(&self) -> &[StepRecord] {
        self.rollout.trace()
    }

    pub fn open_ack(&self) -> Ack {
        let mut ack = Ack::new(&self.id, "open", self.status);
        ack.env = Some(self.env.name().to_string());
        ack.tick_rate = Some(self.tick_rate);
        ack.classes = Some(
            self.registry
                .classes()
                .iter()
                .map(|c| ClassInfo {
                    class_id: c.class_id,
                    name: c.name.clone(),
                    phrases: c.phrases.clone(),
                })
                .collect(),
        );
        ack
    }

    pub fn frame(&self) -> Frame {
        let snapshot = self.env.render(self.rollout.state());
        let active = self.rollout.instruction();
        let (issued, followed) = self.rollout.compliance().counts();
        let macros = self
            .rollout
            .running_macros()
            .iter()
            .enumerate()
            .map(|(agent, m)| m.map(|m| self.env.macro_actions(agent)[m].name.clone()))
            .collect();
        Frame {
            session_id: self.id.clone(),
            episode: self.episode,
            t: self.rollout.t(),
            status: self.status,
            done: self.rollout.is_done(),
            grid: snapshot.cells,
            agents: snapshot.agents,
            items: snapshot.items,
            macros,
            active_instruction: InstructionInfo {
                class_id: active.class_id,
                class_name: self.class_name(active.class_id),
                phrase: active.phrase.clone(),
            },
            pending_instruction: self.pending.clone(),
            return_so_far: self.rollout.total_reward(),
            base_return: self.rollout.base_return(),
            compliance: ComplianceCounts { issued, followed },
            events: self.last_events.clone(),
            ended: self.last_ended.clone(),
            interrupted: self.last_interrupted,
        }
    }

    fn class_name(&self, class: usize) -> String {
        self.registry.class(class).map(|c| c.name.clone()).unwrap_or_default()
    }

    /// Queues a phrase. Registered phrases route to their class; anything
    /// else runs under the null class with the phrase's own embedding, and
    /// the empty phrase cancels the current instruction.
    pub fn inject(&mut self, phrase: &str) -> Outcome<Ack> {
        if self.status == Status::Finished {
            return Err(Rejection::new(ErrorCode::SessionFinished, "episode finished; reset first"));
        }
        let class = self.registry.classify(phrase);
        let recognized = phrase.is_empty() || class.is_some();
        let class = class.unwrap_or(NULL_CLASS);
        self.policy.encoder.embed(phrase).map_err(|e| Rejection::new(ErrorCode::BadMessage, e.to_string()))?;
        self.rollout.queue_instruction(class, phrase.to_string()).map_err(internal)?;
        self.pending = Some(phrase.to_string());
        let mut ack = Ack::new(&self.id, "inject", self.status);
        ack.phrase = Some(phrase.to_string());
        ack.class_id = Some(class);
        ack.class_name = Some(self.class_name(class));
        ack.recognized = Some(recognized);
        ack.at_step = Some(self.rollout.t() + 1);
        Ok(ack)
    }

    /// Executes one primitive step and selects macros for idle agents.
    pub fn advance(&mut self) -> Outcome<Frame> {
        if self.rollout.is_done() {
            return Err(Rejection::new(ErrorCode::SessionFinished, "episode finished; reset first"));
        }
        let report = self.rollout.step(&mut self.selector).map_err(internal)?;
        if report.instruction_changed {
            self.pending = None;
        }
        self.last_events = report.events;
        self.last_ended = report.ended_agents;
        self.last_interrupted = report.instruction_changed;
        if report.done {
            self.status = Status::Finished;
        } else {
            self.prepare()?;
        }
        Ok(self.frame())
    }

    /// Applies a transport command. Returns the acknowledgement and, for
    /// `step` and `reset`, the resulting frame.
    pub fn control(&mut self, command: &str) -> Outcome<(Ack, Option<Frame>)> {
        let cmd = Command::parse(command)
            .ok_or_else(|| Rejection::new(ErrorCode::UnknownCommand, format!("unknown command `{command}`")))?;
        let frame = match cmd {
            Command::Play => {
                if self.status == Status::Finished {
                    return Err(Rejection::new(ErrorCode::SessionFinished, "episode finished; reset first"));
                }
                self.status = Status::Running;
                None
            }
            Command::Pause => {
                if self.status == Status::Running {
                    self.status = Status::Paused;
                }
                None
            }
            Command::Step => match self.status {
                Status::Running => return Err(Rejection::new(ErrorCode::PauseFirst, "pause first")),
                _ => Some(self.advance()?),
            },
            Command::Reset => {
                self.rollout = Self::fresh_rollout(self.env, self.registry, self.policy, self.seed)?;
                self.status = Status::Paused;
                self.episode += 1;
                self.pending = None;
                self.last_events.clear();
                self.last_ended.clear();
                self.last_interrupted = false;
                self.prepare()?;
                Some(self.frame())
            }
            Command::Close => {
                self.status = Status::Closed;
                None
            }
        };
        Ok((Ack::new(&self.id, command, self.status), frame))
    }
}
