//! Live sessions: one stepping thread per world, fed by a command queue.
//!
//! Commands are drained between steps, so every frame is computed under a
//! single configuration version. Frames go out through a watch channel that
//! keeps only the newest one; events go through a bounded broadcast channel
//! whose slow receivers skip ahead. Neither can block the stepping loop.

use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use flowlenia::{BrushTarget, FrameEncoding, FrameMessage, Rect, SimConfig, StepReport};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, oneshot, watch};

use crate::any_world::AnyWorld;
use crate::error::WorkbenchError;

/// A control message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Reads a named scalar (`s`, `dt`, `theta_a`, `n`, `d_max`, `h.K`, `mu.K`, `sigma.K`, ...).
    Get { key: String },
    Set { key: String, value: f64 },
    Pause,
    Resume,
    /// Advances a paused session; every step yields a frame.
    Step {
        #[serde(default = "one")]
        count: u64,
    },
    Paint { target: BrushTarget, rect: Rect, value: f64 },
    Inject { rect: Rect, vector: Vec<f64> },
    Mutate,
    /// Rebuilds the world from the current configuration, optionally with a new seed.
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
    SetStride { stride: u64 },
    SetEncoding { encoding: FrameEncoding },
    Status,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl ErrorInfo {
    pub fn message(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            key: None,
            min: None,
            max: None,
        }
    }
}

impl From<&WorkbenchError> for ErrorInfo {
    fn from(e: &WorkbenchError) -> Self {
        match e {
            WorkbenchError::Core(flowlenia::Error::OutOfRange { name, min, max, .. }) => Self {
                message: e.to_string(),
                key: Some(name.clone()),
                min: Some(*min),
                max: Some(*max),
            },
            _ => Self::message(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub step: u64,
    pub paused: bool,
    pub config_version: u64,
    pub stride: u64,
    pub encoding: FrameEncoding,
    pub total_mass: Vec<f64>,
}

/// Answer to one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub ok: bool,
    pub config_version: u64,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

/// Server-pushed notifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// The configuration changed; `config` is the new authoritative copy.
    ConfigChanged {
        version: u64,
        key: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
        config: Box<SimConfig>,
    },
    /// Sent with every published frame.
    Report {
        config_version: u64,
        /// Reintegration half-width in force for this step.
        s: f64,
        report: StepReport,
    },
    Paused { paused: bool },
    Warning { step: u64, message: String },
}

/// A published frame with its wire encoding.
#[derive(Debug)]
pub struct Frame {
    pub message: FrameMessage,
    pub wire: Vec<u8>,
}

impl Frame {
    fn new(message: FrameMessage) -> Arc<Self> {
        let wire = message.to_wire();
        Arc::new(Self { message, wire })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    pub paused: bool,
    /// Steps between frames while running.
    pub stride: u64,
    pub encoding: FrameEncoding,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            paused: false,
            stride: 1,
            encoding: FrameEncoding::RawF32,
        }
    }
}

enum Envelope {
    Command(Command, oneshot::Sender<Reply>),
    Shutdown,
}

pub struct Session {
    pub id: u64,
    commands: mpsc::Sender<Envelope>,
    frames: watch::Receiver<Option<Arc<Frame>>>,
    events: broadcast::Sender<Event>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

const EVENT_CAPACITY: usize = 256;

impl Session {
    pub fn spawn(id: u64, world: AnyWorld, options: SessionOptions) -> Self {
        let (tx, rx) = mpsc::channel();
        let (frame_tx, frames) = watch::channel(None);
        let (events, _) = broadcast::channel(EVENT_CAPACITY);
        let mut lp = Loop {
            world,
            paused: options.paused,
            pending: 0,
            stride: options.stride.max(1),
            encoding: options.encoding,
            version: 0,
            frames: frame_tx,
            events: events.clone(),
        };
        let thread = std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || lp.run(rx))
            .expect("spawn session thread");
        Self {
            id,
            commands: tx,
            frames,
            events,
            thread: Mutex::new(Some(thread)),
        }
    }

    /// Queues a command and waits for it to be applied between two steps.
    pub async fn command(&self, command: Command) -> Reply {
        let (tx, rx) = oneshot::channel();
        if self.commands.send(Envelope::Command(command, tx)).is_err() {
            return closed_reply();
        }
        rx.await.unwrap_or_else(|_| closed_reply())
    }

    pub fn frames(&self) -> watch::Receiver<Option<Arc<Frame>>> {
        self.frames.clone()
    }

    pub fn events(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }

    /// Stops the stepping thread and waits for it.
    pub fn shutdown(&self) {
        let _ = self.commands.send(Envelope::Shutdown);
        let thread = self.thread.lock().unwrap().take();
        if let Some(t) = thread {
            let _ = t.join();
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn closed_reply() -> Reply {
    Reply {
        ok: false,
        config_version: 0,
        step: 0,
        value: None,
        status: None,
        error: Some(ErrorInfo::message("session is closed")),
    }
}

struct Loop {
    world: AnyWorld,
    paused: bool,
    pending: u64,
    stride: u64,
    encoding: FrameEncoding,
    version: u64,
    frames: watch::Sender<Option<Arc<Frame>>>,
    events: broadcast::Sender<Event>,
}

/// How long an idle loop waits for a command before checking again.
const IDLE_POLL: Duration = Duration::from_millis(200);

impl Loop {
    fn run(&mut self, rx: mpsc::Receiver<Envelope>) {
        self.publish_frame();
        loop {
            if self.paused && self.pending == 0 {
                match rx.recv_timeout(IDLE_POLL) {
                    Ok(Envelope::Command(c, reply)) => self.handle(c, reply),
                    Ok(Envelope::Shutdown) | Err(RecvTimeoutError::Disconnected) => return,
                    Err(RecvTimeoutError::Timeout) => continue,
                }
            }
            loop {
                match rx.try_recv() {
                    Ok(Envelope::Command(c, reply)) => self.handle(c, reply),
                    Ok(Envelope::Shutdown) | Err(TryRecvError::Disconnected) => return,
                    Err(TryRecvError::Empty) => break,
                }
            }
            if !self.paused || self.pending > 0 {
                let single = self.pending > 0;
                self.pending = self.pending.saturating_sub(1);
                self.advance(single);
            }
        }
    }

    fn advance(&mut self, single: bool) {
        match self.world.step() {
            Ok(report) => {
                if let Some((drift, tolerance)) = self.world.conservation_violation(&report) {
                    self.emit(Event::Warning {
                        step: report.step,
                        message: format!("relative mass drift {drift:e} exceeds {tolerance:e}"),
                    });
                }
                if single || self.world.step_index().is_multiple_of(self.stride) {
                    let s = self.world.config().flow.s;
                    self.emit(Event::Report {
                        config_version: self.version,
                        s,
                        report,
                    });
                    self.publish_frame();
                }
            }
            Err(e) => {
                self.paused = true;
                self.pending = 0;
                self.emit(Event::Warning {
                    step: self.world.step_index(),
                    message: format!("stepping stopped: {e}"),
                });
                self.emit(Event::Paused { paused: true });
            }
        }
    }

    fn emit(&self, event: Event) {
        let _ = self.events.send(event);
    }

    fn publish_frame(&self) {
        self.frames.send_replace(Some(Frame::new(self.world.frame(self.encoding))));
    }

    fn config_changed(&mut self, key: &str, value: Option<f64>) {
        self.version += 1;
        self.emit(Event::ConfigChanged {
            version: self.version,
            key: key.to_string(),
            value,
            config: Box::new(self.world.config().clone()),
        });
    }

    fn status(&self) -> Status {
        Status {
            step: self.world.step_index(),
            paused: self.paused,
            config_version: self.version,
            stride: self.stride,
            encoding: self.encoding,
            total_mass: self.world.total_mass(),
        }
    }

    fn handle(&mut self, command: Command, reply: oneshot::Sender<Reply>) {
        let result = self.apply(command);
        let mut r = Reply {
            ok: true,
            config_version: self.version,
            step: self.world.step_index(),
            value: None,
            status: None,
            error: None,
        };
        match result {
            Ok((value, status)) => {
                r.value = value;
                r.status = status;
            }
            Err(e) => {
                r.ok = false;
                r.error = Some(ErrorInfo::from(&e));
            }
        }
        let _ = reply.send(r);
    }

    /// Applies one command; on error the session is left as it was.
    fn apply(&mut self, command: Command) -> crate::Result<(Option<f64>, Option<Status>)> {
        match command {
            Command::Get { key } => return Ok((Some(self.world.scalar(&key)?), None)),
            Command::Set { key, value } => {
                self.world.set_scalar(&key, value)?;
                self.config_changed(&key, Some(value));
            }
            Command::Pause | Command::Resume => {
                self.paused = matches!(command, Command::Pause);
                self.pending = 0;
                self.emit(Event::Paused { paused: self.paused });
            }
            Command::Step { count } => {
                if !self.paused {
                    return Err(WorkbenchError::Usage("pause the session before single-stepping".into()));
                }
                self.pending += count;
            }
            Command::Paint { target, rect, value } => {
                self.world.paint(target, rect, value)?;
                self.publish_frame();
            }
            Command::Inject { rect, vector } => {
                self.world.inject_species(rect, &vector)?;
                self.publish_frame();
            }
            Command::Mutate => {
                self.world.mutate()?;
                self.publish_frame();
            }
            Command::Reset { seed } => {
                let mut config = self.world.config().clone();
                if let Some(seed) = seed {
                    config.seed = seed;
                }
                self.world = AnyWorld::new(config, Some(self.world.precision()))?;
                self.config_changed("reset", seed.map(|s| s as f64));
                self.publish_frame();
            }
            Command::SetStride { stride } => {
                if stride == 0 {
                    return Err(WorkbenchError::Usage("stride must be at least 1".into()));
                }
                self.stride = stride;
            }
            Command::SetEncoding { encoding } => {
                self.encoding = encoding;
                self.publish_frame();
            }
            Command::Status => return Ok((None, Some(self.status()))),
        }
        Ok((None, None))
    }
}
