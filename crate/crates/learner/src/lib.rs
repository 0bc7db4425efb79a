//! Instruction-conditioned macro-action actor-critic.
//!
//! Per-agent actor and critic networks read a flattened history window and
//! a frozen phrase embedding. At replay time, segments that crossed an
//! instruction change can have their reward corrected so each class's
//! value is learned as if that class had stayed in force.

pub mod buffer;
pub mod checkpoint;
pub mod collect;
pub mod encoder;
pub mod error;
pub mod nn;
pub mod policy;
pub mod trainer;
pub mod update;

pub use buffer::{MacroTransition, ReplayBuffer};
pub use checkpoint::Checkpoint;
pub use collect::{eval_base, eval_compliance, BaseStats, ComplianceRecord, ComplianceStats, InstructionPlan};
pub use encoder::{Encoder, EncoderSpec};
pub use error::{LearnerError, Result};
pub use policy::{Policy, PolicyShape};
pub use trainer::{train, MetricsLine, TrainConfig, TrainOutput, Trainer};
pub use update::{apply_correction, actor_gradient, segment_return, AdvantageForm, BootstrapTarget, Mode};
