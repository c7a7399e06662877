//! HTTP control API and WebSocket stream for live sessions.
//!
//! Routes:
//! - `GET /health`
//! - `GET /sessions`, `POST /sessions`
//! - `GET /sessions/{id}` (status), `DELETE /sessions/{id}`
//! - `POST /sessions/{id}/commands` with one [`Command`] as JSON
//! - `GET /sessions/{id}/stream`: binary frames plus JSON text events; text
//!   messages sent by the client are treated as commands and answered in place.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flowlenia::{FrameEncoding, Precision, SimConfig};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use crate::any_world::AnyWorld;
use crate::session::{Command, ErrorInfo, Reply, Session, SessionOptions};

#[derive(Default)]
struct Inner {
    next_id: AtomicU64,
    sessions: Mutex<BTreeMap<u64, Arc<Session>>>,
}

/// Shared server state: the default config and the live sessions.
#[derive(Clone)]
pub struct AppState {
    default_config: Arc<SimConfig>,
    precision: Option<Precision>,
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(default_config: SimConfig, precision: Option<Precision>) -> Self {
        Self {
            default_config: Arc::new(default_config),
            precision,
            inner: Arc::default(),
        }
    }

    fn session(&self, id: u64) -> Option<Arc<Session>> {
        self.inner.sessions.lock().unwrap().get(&id).cloned()
    }

    /// Stops every session thread.
    pub fn close_all(&self) {
        let sessions = std::mem::take(&mut *self.inner.sessions.lock().unwrap());
        for session in sessions.values() {
            session.shutdown();
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub config: Option<SimConfig>,
    #[serde(default)]
    pub paused: bool,
    #[serde(default)]
    pub stride: Option<u64>,
    #[serde(default)]
    pub encoding: Option<FrameEncoding>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: u64,
    pub config: SimConfig,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(session_status).delete(delete_session))
        .route("/sessions/{id}/commands", post(post_command))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorInfo::message(message))).into_response()
}

fn not_found(id: u64) -> Response {
    error(StatusCode::NOT_FOUND, format!("no session {id}"))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<u64>> {
    Json(state.inner.sessions.lock().unwrap().keys().copied().collect())
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Response {
    let req: CreateSession = if body.is_empty() {
        CreateSession::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid session request: {e}")),
        }
    };
    if req.stride == Some(0) {
        return error(StatusCode::BAD_REQUEST, "stride must be at least 1");
    }
    let config = req.config.unwrap_or_else(|| (*state.default_config).clone());
    let world = match AnyWorld::new(config, state.precision) {
        Ok(w) => w,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(ErrorInfo::from(&e))).into_response(),
    };
    let config = world.config().clone();
    let defaults = SessionOptions::default();
    let options = SessionOptions {
        paused: req.paused,
        stride: req.stride.unwrap_or(defaults.stride),
        encoding: req.encoding.unwrap_or(defaults.encoding),
    };
    let id = state.inner.next_id.fetch_add(1, Ordering::Relaxed);
    let session = Arc::new(Session::spawn(id, world, options));
    state.inner.sessions.lock().unwrap().insert(id, session);
    tracing::info!(id, "session created");
    (StatusCode::CREATED, Json(Created { id, config })).into_response()
}

async fn session_status(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    match state.session(id) {
        Some(s) => Json(s.command(Command::Status).await).into_response(),
        None => not_found(id),
    }
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    let removed = state.inner.sessions.lock().unwrap().remove(&id);
    match removed {
        Some(session) => {
            // The stepping thread is joined off the async runtime.
            let _ = tokio::task::spawn_blocking(move || session.shutdown()).await;
            tracing::info!(id, "session closed");
            StatusCode::NO_CONTENT.into_response()
        }
        None => not_found(id),
    }
}

fn parse_command(text: &[u8]) -> Result<Command, Box<Reply>> {
    serde_json::from_slice(text).map_err(|e| {
        Box::new(Reply {
            ok: false,
            config_version: 0,
            step: 0,
            value: None,
            status: None,
            error: Some(ErrorInfo::message(format!("malformed command: {e}"))),
        })
    })
}

async fn post_command(State(state): State<AppState>, Path(id): Path<u64>, body: Bytes) -> Response {
    let Some(session) = state.session(id) else {
        return not_found(id);
    };
    let reply = match parse_command(&body) {
        Ok(command) => session.command(command).await,
        Err(reply) => return (StatusCode::BAD_REQUEST, Json(reply)).into_response(),
    };
    let status = if reply.ok {
        StatusCode::OK
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    (status, Json(reply)).into_response()
}

async fn stream(State(state): State<AppState>, Path(id): Path<u64>, ws: WebSocketUpgrade) -> Response {
    match state.session(id) {
        Some(session) => ws.on_upgrade(move |socket| serve_stream(socket, session)),
        None => not_found(id),
    }
}

/// Pushes the newest frame whenever it changes; a slow client skips frames instead of queueing them.
async fn serve_stream(socket: WebSocket, session: Arc<Session>) {
    let (mut tx, mut rx) = socket.split();
    let mut frames = session.frames();
    let mut events = session.events();
    frames.mark_changed();
    loop {
        tokio::select! {
            changed = frames.changed() => {
                if changed.is_err() {
                    break;
                }
                let frame = frames.borrow_and_update().clone();
                if let Some(frame) = frame {
                    if tx.send(Message::Binary(frame.wire.clone().into())).await.is_err() {
                        break;
                    }
                }
            }
            event = events.recv() => {
                let text = match event {
                    Ok(event) => serde_json::to_string(&event).unwrap_or_default(),
                    Err(RecvError::Lagged(n)) => format!(r#"{{"event":"lagged","skipped":{n}}}"#),
                    Err(RecvError::Closed) => break,
                };
                if tx.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            incoming = rx.next() => {
                let reply = match incoming {
                    Some(Ok(Message::Text(text))) => match parse_command(text.as_bytes()) {
                        Ok(command) => session.command(command).await,
                        Err(reply) => *reply,
                    },
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let text = serde_json::to_string(&reply).unwrap_or_default();
                if tx.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
        }
    }
}

/// Binds and serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let app = router(state.clone());
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    tokio::task::spawn_blocking(move || state.close_all()).await.ok();
    result
}
