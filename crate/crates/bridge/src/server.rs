//! TCP server: newline-delimited JSON, or WebSocket text frames when the
//! connection opens with an HTTP upgrade request.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::{Duration, Instant};

use mavic_core::envs::{build_env, BuiltEnv};
use mavic_core::model::EnvModel;
use mavic_core::with_env;
use mavic_core::instructions::InstructionRegistry;
use mavic_learner::{Checkpoint, Policy};
use serde_json::Value;
use tungstenite::{Message, WebSocket};

use crate::protocol::{parse_client, ClientMessage, ErrorCode, OpenRequest, ServerMessage, Status};
use crate::session::{Rejection, Session};

/// Defaults applied to `open` requests.
#[derive(Clone, Debug, Default)]
pub struct ServerConfig {
    /// Environment sections by env name, used when an `open` carries none.
    pub env_configs: BTreeMap<String, Value>,
    pub tick_rate: Option<f64>,
}

pub enum Received {
    Message(String),
    Timeout,
    Closed,
}

/// A bidirectional text channel.
pub trait Transport {
    /// Waits up to `timeout` (forever when `None`) for one message.
    fn recv(&mut self, timeout: Option<Duration>) -> io::Result<Received>;
    fn send(&mut self, text: &str) -> io::Result<()>;

    fn send_message(&mut self, msg: &ServerMessage) -> io::Result<()> {
        self.send(&msg.to_line())
    }
}

fn read_timeout(timeout: Option<Duration>) -> Option<Duration> {
    timeout.map(|d| d.max(Duration::from_millis(1)))
}

fn timed_out(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

/// Newline-delimited JSON over a TCP stream.
pub struct LineTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    partial: Vec<u8>,
}

impl LineTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
            partial: Vec::new(),
        })
    }
}

impl Transport for LineTransport {
    fn recv(&mut self, timeout: Option<Duration>) -> io::Result<Received> {
        self.reader.get_ref().set_read_timeout(read_timeout(timeout))?;
        loop {
            match self.reader.read_until(b'\n', &mut self.partial) {
                Ok(0) => return Ok(Received::Closed),
                Ok(_) if self.partial.ends_with(b"\n") => {
                    let line = String::from_utf8_lossy(&self.partial).trim().to_string();
                    self.partial.clear();
                    if line.is_empty() {
                        continue;
                    }
                    return Ok(Received::Message(line));
                }
                Ok(_) => return Ok(Received::Closed),
                Err(e) if timed_out(&e) => return Ok(Received::Timeout),
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
    }

    fn send(&mut self, text: &str) -> io::Result<()> {
        self.writer.write_all(text.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }
}

/// Text frames over a WebSocket; each frame carries one JSON message.
pub struct WsTransport {
    socket: WebSocket<TcpStream>,
}

impl WsTransport {
    pub fn accept(stream: TcpStream) -> io::Result<Self> {
        let socket = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        Ok(Self { socket })
    }
}

fn ws_error(e: tungstenite::Error) -> io::Result<Received> {
    match e {
        tungstenite::Error::Io(e) if timed_out(&e) => Ok(Received::Timeout),
        tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => Ok(Received::Closed),
        tungstenite::Error::Io(e) => Err(e),
        other => Err(io::Error::other(other.to_string())),
    }
}

impl Transport for WsTransport {
    fn recv(&mut self, timeout: Option<Duration>) -> io::Result<Received> {
        self.socket.get_ref().set_read_timeout(read_timeout(timeout))?;
        loop {
            match self.socket.read() {
                Ok(Message::Text(text)) => return Ok(Received::Message(text.to_string())),
                Ok(Message::Binary(bytes)) => return Ok(Received::Message(String::from_utf8_lossy(&bytes).into_owned())),
                Ok(Message::Close(_)) => return Ok(Received::Closed),
                Ok(_) => continue,
                Err(e) => return ws_error(e),
            }
        }
    }

    fn send(&mut self, text: &str) -> io::Result<()> {
        self.socket
            .send(Message::text(text))
            .map_err(|e| io::Error::other(e.to_string()))
    }
}

/// Environment and policy owned for the lifetime of a session.
pub struct Loaded {
    pub built: BuiltEnv,
    pub policy: Policy,
}

pub fn load(request: &OpenRequest, config: &ServerConfig) -> Result<Loaded, Rejection> {
    let env_config = request
        .env_config
        .clone()
        .or_else(|| config.env_configs.get(&request.env).cloned())
        .unwrap_or(Value::Null);
    let built = build_env(&request.env, &env_config).map_err(|e| rejection(ErrorCode::BadEnv, e))?;
    let checkpoint = Checkpoint::load(Path::new(&request.checkpoint))
        .map_err(|e| rejection(ErrorCode::BadCheckpoint, format!("{}: {e}", request.checkpoint)))?;
    if checkpoint.shape.env != built.name() {
        return Err(rejection(
            ErrorCode::BadCheckpoint,
            format!("checkpoint was trained on `{}`, requested env is `{}`", checkpoint.shape.env, built.name()),
        ));
    }
    let policy = checkpoint
        .policy(&built.registry)
        .map_err(|e| rejection(ErrorCode::BadCheckpoint, e))?;
    Ok(Loaded { built, policy })
}

fn rejection(code: ErrorCode, e: impl std::fmt::Display) -> Rejection {
    Rejection {
        code,
        message: e.to_string(),
    }
}

enum Exit {
    Closed,
    Reopen(OpenRequest),
    Disconnected,
}

/// Handles one connection until the peer goes away. A connection holds at
/// most one session; a second `open` replaces the first.
pub fn serve_connection<T: Transport>(transport: &mut T, config: &ServerConfig) -> io::Result<()> {
    let mut next: Option<OpenRequest> = None;
    loop {
        let request = match next.take() {
            Some(r) => r,
            None => match transport.recv(None)? {
                Received::Closed => return Ok(()),
                Received::Timeout => continue,
                Received::Message(text) => match parse_client(&text) {
                    Ok(ClientMessage::Open(r)) => r,
                    Ok(_) => {
                        transport.send_message(&ServerMessage::error(ErrorCode::NoSession, "no open session"))?;
                        continue;
                    }
                    Err(msg) => {
                        transport.send_message(&msg)?;
                        continue;
                    }
                },
            },
        };
        let loaded = match load(&request, config) {
            Ok(l) => l,
            Err(r) => {
                transport.send_message(&r.into_message())?;
                continue;
            }
        };
        let tick_rate = request.tick_rate.or(config.tick_rate);
        let exit = with_env!(&loaded.built.env, env => {
            run_session(env, &loaded.built.registry, &loaded.policy, &request, tick_rate, transport)?
        });
        match exit {
            Exit::Closed => continue,
            Exit::Reopen(r) => next = Some(r),
            Exit::Disconnected => return Ok(()),
        }
    }
}

fn run_session<E: EnvModel, T: Transport>(
    env: &E,
    registry: &InstructionRegistry,
    policy: &Policy,
    request: &OpenRequest,
    tick_rate: Option<f64>,
    transport: &mut T,
) -> io::Result<Exit> {
    let mut session = match Session::open(env, registry, policy, request.seed, request.greedy, tick_rate) {
        Ok(s) => s,
        Err(r) => {
            transport.send_message(&r.into_message())?;
            return Ok(Exit::Closed);
        }
    };
    transport.send_message(&ServerMessage::Ack(session.open_ack()))?;
    transport.send_message(&ServerMessage::Frame(session.frame()))?;
    let interval = Duration::from_secs_f64(1.0 / session.tick_rate());
    let mut next_tick = Instant::now() + interval;
    loop {
        let timeout = (session.status() == Status::Running).then(|| next_tick.saturating_duration_since(Instant::now()));
        match transport.recv(timeout)? {
            Received::Closed => return Ok(Exit::Disconnected),
            Received::Timeout => {
                if session.status() != Status::Running {
                    continue;
                }
                next_tick += interval;
                match session.advance() {
                    Ok(frame) => transport.send_message(&ServerMessage::Frame(frame))?,
                    Err(r) => transport.send_message(&r.into_message())?,
                }
            }
            Received::Message(text) => {
                let msg = match parse_client(&text) {
                    Ok(m) => m,
                    Err(e) => {
                        transport.send_message(&e)?;
                        continue;
                    }
                };
                let (target, reply) = match msg {
                    ClientMessage::Open(r) => return Ok(Exit::Reopen(r)),
                    ClientMessage::Inject { session_id, phrase } => (session_id, Either::Inject(phrase)),
                    ClientMessage::Control { session_id, command } => (session_id, Either::Control(command)),
                };
                if let Some(id) = target.filter(|id| id != session.id()) {
                    let msg = ServerMessage::error(ErrorCode::UnknownSession, format!("unknown session `{id}`"));
                    transport.send_message(&msg)?;
                    continue;
                }
                match reply {
                    Either::Inject(phrase) => match session.inject(&phrase) {
                        Ok(ack) => transport.send_message(&ServerMessage::Ack(ack))?,
                        Err(r) => transport.send_message(&r.into_message())?,
                    },
                    Either::Control(command) => {
                        let was_running = session.status() == Status::Running;
                        match session.control(&command) {
                            Ok((ack, frame)) => {
                                transport.send_message(&ServerMessage::Ack(ack))?;
                                if let Some(f) = frame {
                                    transport.send_message(&ServerMessage::Frame(f))?;
                                }
                            }
                            Err(r) => transport.send_message(&r.into_message())?,
                        }
                        if session.status() == Status::Closed {
                            return Ok(Exit::Closed);
                        }
                        if !was_running && session.status() == Status::Running {
                            next_tick = Instant::now() + interval;
                        }
                    }
                }
            }
        }
    }
}

enum Either {
    Inject(String),
    Control(String),
}

/// Starts the transport matching the first bytes of the connection.
pub fn handle_stream(stream: TcpStream, config: &ServerConfig) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut head = [0u8; 4];
    let n = stream.peek(&mut head)?;
    if n >= 4 && &head == b"GET " {
        serve_connection(&mut WsTransport::accept(stream)?, config)
    } else {
        serve_connection(&mut LineTransport::new(stream)?, config)
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve_listener(listener: TcpListener, config: ServerConfig) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        let config = config.clone();
        std::thread::spawn(move || {
            let _ = handle_stream(stream, &config);
        });
    }
    Ok(())
}

pub fn serve(addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<()> {
    serve_listener(TcpListener::bind(addr)?, config)
}
