//! Wire messages. One JSON object per line; unknown fields are ignored.

use mavic_core::instructions::ClassId;
use mavic_core::model::{AgentView, ItemView};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Open(OpenRequest),
    Inject {
        #[serde(default)]
        session_id: Option<String>,
        phrase: String,
    },
    Control {
        #[serde(default)]
        session_id: Option<String>,
        command: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenRequest {
    pub env: String,
    /// Environment section; the server's default for `env` when absent.
    #[serde(default)]
    pub env_config: Option<Value>,
    pub checkpoint: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tick_rate: Option<f64>,
    #[serde(default = "yes")]
    pub greedy: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Paused,
    Finished,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionInfo {
    pub class_id: ClassId,
    pub class_name: String,
    pub phrase: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceCounts {
    pub issued: usize,
    pub followed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub class_id: ClassId,
    pub name: String,
    pub phrases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub session_id: String,
    /// Increments on every reset.
    pub episode: u64,
    /// Primitive steps executed so far.
    pub t: usize,
    pub status: Status,
    pub done: bool,
    pub grid: Vec<Vec<String>>,
    pub agents: Vec<AgentView>,
    #[serde(default)]
    pub items: Vec<ItemView>,
    /// Macro each agent will execute on the next step.
    pub macros: Vec<Option<String>>,
    pub active_instruction: InstructionInfo,
    #[serde(default)]
    pub pending_instruction: Option<String>,
    pub return_so_far: f64,
    #[serde(default)]
    pub base_return: f64,
    pub compliance: ComplianceCounts,
    /// Events of the step that produced this frame.
    #[serde(default)]
    pub events: Vec<String>,
    /// Agents whose macro ended on that step.
    #[serde(default)]
    pub ended: Vec<usize>,
    /// The instruction changed on that step, interrupting every macro.
    #[serde(default)]
    pub interrupted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    /// `open`, `inject`, or the control command.
    pub command: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<ClassInfo>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    /// False when the phrase matched no registered class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recognized: Option<bool>,
    /// First step executed under the new instruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_step: Option<usize>,
}

impl Ack {
    pub fn new(session_id: &str, command: &str, status: Status) -> Self {
        Self {
            session_id: session_id.to_string(),
            command: command.to_string(),
            status,
            env: None,
            classes: None,
            tick_rate: None,
            phrase: None,
            class_id: None,
            class_name: None,
            recognized: None,
            at_step: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    BadCheckpoint,
    BadEnv,
    NoSession,
    UnknownSession,
    UnknownCommand,
    PauseFirst,
    SessionFinished,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(Frame),
    Ack(Ack),
    Error(ErrorMessage),
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error(ErrorMessage {
            code,
            message: message.into(),
        })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

/// Parses one inbound line.
pub fn parse_client(line: &str) -> Result<ClientMessage, ServerMessage> {
    serde_json::from_str(line).map_err(|e| ServerMessage::error(ErrorCode::BadMessage, e.to_string()))
}
