//! Live sessions: a trained policy stepping through an environment while a
//! human issues instructions over a JSON-lines or WebSocket connection.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{Ack, ClientMessage, ErrorCode, Frame, OpenRequest, ServerMessage, Status};
pub use server::{serve, serve_listener, ServerConfig};
pub use session::{Command, Rejection, Session, DEFAULT_TICK_RATE};
