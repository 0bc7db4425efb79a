//! Deciding whether an issued instruction was followed.
//!
//! Restrictive instructions are judged when they stop being in force: they
//! are followed if the restricted event never happened while active.
//! Directive instructions are followed as soon as their target event occurs
//! and count as violated if they expire first. A directive still active when
//! the episode ends stays pending.

use serde::{Deserialize, Serialize};

use crate::instructions::{ClassId, InstructionRegistry, NULL_CLASS};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComplianceRule {
    /// The null class; nothing to follow.
    Unconstrained,
    /// Violated by any occurrence of `event` while active.
    Avoid { event: String },
    /// Followed once `event` occurs while active.
    Achieve { event: String },
    /// Followed if `event` occurs within the first `budget` active steps.
    AchieveWithin { event: String, budget: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Followed,
    Violated,
    Pending,
}

/// Why a compliance window stopped growing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowStatus {
    /// Instruction still in force.
    Active,
    /// Instruction replaced or reverted to the null class.
    Expired,
    /// Episode ended (terminal state or horizon) while it was in force.
    EpisodeEnded,
}

/// Judges one instruction given the events of each step it was active.
pub fn judge(rule: &ComplianceRule, window: &[Vec<String>], status: WindowStatus) -> Outcome {
    let occurs_in = |event: &str, steps: &[Vec<String>]| {
        steps.iter().any(|s| s.iter().any(|e| e == event))
    };
    match rule {
        ComplianceRule::Unconstrained => Outcome::Followed,
        ComplianceRule::Avoid { event } => {
            if occurs_in(event, window) {
                Outcome::Violated
            } else if status == WindowStatus::Active {
                Outcome::Pending
            } else {
                Outcome::Followed
            }
        }
        ComplianceRule::Achieve { event } => {
            if occurs_in(event, window) {
                Outcome::Followed
            } else {
                match status {
                    WindowStatus::Expired => Outcome::Violated,
                    _ => Outcome::Pending,
                }
            }
        }
        ComplianceRule::AchieveWithin { event, budget } => {
            let head = &window[..window.len().min(*budget)];
            if occurs_in(event, head) {
                Outcome::Followed
            } else if window.len() >= *budget || status == WindowStatus::Expired {
                Outcome::Violated
            } else {
                Outcome::Pending
            }
        }
    }
}

/// `compliance_event` over a registry class.
pub fn compliance_event(
    registry: &InstructionRegistry,
    class: ClassId,
    window: &[Vec<String>],
    status: WindowStatus,
) -> Result<Outcome> {
    Ok(judge(&registry.class(class)?.rule(), window, status))
}

/// One issued instruction and how it resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IssuedInstruction {
    pub class_id: ClassId,
    pub phrase: String,
    pub issued_at: usize,
    pub active_steps: usize,
    pub outcome: Outcome,
}

#[derive(Clone, Debug)]
struct Activation {
    class_id: ClassId,
    phrase: String,
    issued_at: usize,
    rule: ComplianceRule,
    window: Vec<Vec<String>>,
}

/// Tracks the activation window of the current instruction.
#[derive(Clone, Debug, Default)]
pub struct ComplianceTracker {
    current: Option<Activation>,
    resolved: Vec<IssuedInstruction>,
}

impl ComplianceTracker {
    /// Records the events of a step taken under the current instruction.
    pub fn record_step(&mut self, events: &[String]) {
        if let Some(a) = self.current.as_mut() {
            a.window.push(events.to_vec());
        }
    }

    /// Closes the current activation (if any) and opens one for `class` when
    /// it is not the null class. `step` is the first step it is in force.
    pub fn switch_to(
        &mut self,
        registry: &InstructionRegistry,
        class: ClassId,
        phrase: &str,
        step: usize,
    ) -> Result<()> {
        self.close(WindowStatus::Expired);
        if class != NULL_CLASS {
            self.current = Some(Activation {
                class_id: class,
                phrase: phrase.to_string(),
                issued_at: step,
                rule: registry.class(class)?.rule(),
                window: Vec::new(),
            });
        }
        Ok(())
    }

    /// Closes the current activation because the episode ended.
    pub fn finish(&mut self) {
        self.close(WindowStatus::EpisodeEnded);
    }

    fn close(&mut self, status: WindowStatus) {
        if let Some(a) = self.current.take() {
            self.resolved.push(IssuedInstruction {
                outcome: judge(&a.rule, &a.window, status),
                class_id: a.class_id,
                phrase: a.phrase,
                issued_at: a.issued_at,
                active_steps: a.window.len(),
            });
        }
    }

    /// Current outcome of the open activation, if any.
    pub fn current_outcome(&self) -> Option<Outcome> {
        self.current
            .as_ref()
            .map(|a| judge(&a.rule, &a.window, WindowStatus::Active))
    }

    pub fn resolved(&self) -> &[IssuedInstruction] {
        &self.resolved
    }

    /// `(issued, followed)` counting the open activation as issued.
    pub fn counts(&self) -> (usize, usize) {
        let issued = self.resolved.len() + usize::from(self.current.is_some());
        let followed = self
            .resolved
            .iter()
            .filter(|r| r.outcome == Outcome::Followed)
            .count()
            + usize::from(self.current_outcome() == Some(Outcome::Followed));
        (issued, followed)
    }
}
