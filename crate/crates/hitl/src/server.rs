//! HTTP + websocket transport around [`LiveSession`].
//!
//! Each session runs one task that owns the state machine: it steps the
//! environment on a fixed tick and applies client commands between steps in
//! arrival order. Frames and acknowledgements are broadcast to every client
//! of the session; errors go only to the client that caused them.
//!
//! Routes: `GET /health`, `GET /sessions`, `GET /ws` (new session) and
//! `GET /ws/{id}` (join an existing session).

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::error::HitlError;
use crate::live::{LiveSession, SessionConfig, SessionStatus};
use crate::protocol::{ClientMessage, ServerMessage};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Environment steps per second under policy control.
    pub tick_hz: f64,
    pub session: SessionConfig,
}

impl ServerConfig {
    pub fn new(bind: SocketAddr, session: SessionConfig) -> Self {
        Self { bind, tick_hz: 10.0, session }
    }

    pub fn validate(&self) -> Result<(), HitlError> {
        if !(self.tick_hz.is_finite() && self.tick_hz > 0.0 && self.tick_hz <= 1000.0) {
            return Err(HitlError::Config(format!("tick rate {} outside (0, 1000]", self.tick_hz)));
        }
        self.session.validate()
    }
}

type Outbound = Arc<str>;

enum Command {
    Join { reply: oneshot::Sender<(Outbound, broadcast::Receiver<Outbound>)> },
    Client { msg: ClientMessage, errors: mpsc::UnboundedSender<Outbound> },
    Leave,
}

#[derive(Clone)]
struct SessionHandle {
    commands: mpsc::UnboundedSender<Command>,
    status: Arc<Mutex<SessionStatus>>,
}

#[derive(Clone)]
struct AppState {
    cfg: Arc<ServerConfig>,
    sessions: Arc<Mutex<HashMap<String, SessionHandle>>>,
}

/// A listening server. Dropping it does not stop the server; call
/// [`RunningServer::shutdown`].
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl RunningServer {
    /// Address actually bound (resolves port 0).
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }

    /// Runs until the process is interrupted.
    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

/// Binds and starts serving. Fails immediately if the address is in use.
pub async fn serve(cfg: ServerConfig) -> Result<RunningServer, HitlError> {
    cfg.validate()?;
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|source| HitlError::Bind { addr: cfg.bind, source })?;
    let addr = listener.local_addr()?;
    let state = AppState { cfg: Arc::new(cfg), sessions: Arc::new(Mutex::new(HashMap::new())) };
    let app = Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions))
        .route("/ws", get(new_session))
        .route("/ws/{id}", get(join_session))
        .with_state(state);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            log::error!("server stopped: {e}");
        }
    });
    log::info!("serving live sessions on {addr}");
    Ok(RunningServer { addr, shutdown: Some(tx), task })
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    task: String,
    sessions: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let sessions = state.sessions.lock().expect("session registry poisoned").len();
    Json(Health { status: "ok", task: state.cfg.session.env.task().name.clone(), sessions })
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionStatus>> {
    let sessions = state.sessions.lock().expect("session registry poisoned");
    let mut list: Vec<SessionStatus> =
        sessions.values().map(|h| h.status.lock().expect("status poisoned").clone()).collect();
    list.sort_by(|a, b| a.id.cmp(&b.id));
    Json(list)
}

async fn new_session(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let handle = spawn_session(&state, id);
    ws.on_upgrade(move |socket| client(socket, handle))
}

async fn join_session(ws: WebSocketUpgrade, Path(id): Path<String>, State(state): State<AppState>) -> Response {
    let handle = state.sessions.lock().expect("session registry poisoned").get(&id).cloned();
    match handle {
        Some(h) => ws.on_upgrade(move |socket| client(socket, h)),
        None => (StatusCode::NOT_FOUND, format!("no session {id}")).into_response(),
    }
}

fn spawn_session(state: &AppState, id: String) -> SessionHandle {
    let session = LiveSession::new(id.clone(), state.cfg.session.clone());
    let (commands, rx) = mpsc::unbounded_channel();
    let status = Arc::new(Mutex::new(session.status()));
    let handle = SessionHandle { commands, status: Arc::clone(&status) };
    state.sessions.lock().expect("session registry poisoned").insert(id.clone(), handle.clone());
    let registry = Arc::clone(&state.sessions);
    let tick_hz = state.cfg.tick_hz;
    tokio::spawn(async move {
        run_session(session, rx, status, tick_hz).await;
        registry.lock().expect("session registry poisoned").remove(&id);
        log::info!("session {id} closed");
    });
    handle
}

/// The session's stepping loop. Commands take priority over ticks so they
/// are applied before the next step.
async fn run_session(
    mut session: LiveSession,
    mut rx: mpsc::UnboundedReceiver<Command>,
    status: Arc<Mutex<SessionStatus>>,
    tick_hz: f64,
) {
    let (out, _) = broadcast::channel::<Outbound>(1024);
    let send_all = |msgs: Vec<ServerMessage>| {
        for m in msgs {
            // No receivers is fine: nobody is watching right now.
            let _ = out.send(Arc::from(m.to_json()));
        }
    };
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / tick_hz));
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut joined_once = false;
    loop {
        tokio::select! {
            biased;
            cmd = rx.recv() => {
                let Some(cmd) = cmd else { break };
                match cmd {
                    Command::Join { reply } => {
                        session.client_joined();
                        joined_once = true;
                        let hello: Outbound = Arc::from(session.hello(tick_hz).to_json());
                        let _ = reply.send((hello, out.subscribe()));
                    }
                    Command::Client { msg, errors } => match session.handle(msg) {
                        Ok(msgs) => send_all(msgs),
                        Err(e) => {
                            let _ = errors.send(Arc::from(ServerMessage::error(&e, session.mode()).to_json()));
                        }
                    },
                    Command::Leave => {
                        send_all(session.client_left());
                    }
                }
            }
            _ = interval.tick() => send_all(session.tick()),
        }
        *status.lock().expect("status poisoned") = session.status();
        if joined_once && session.clients() == 0 {
            break;
        }
    }
}

async fn client(socket: WebSocket, session: SessionHandle) {
    let (reply_tx, reply_rx) = oneshot::channel();
    if session.commands.send(Command::Join { reply: reply_tx }).is_err() {
        return;
    }
    let Ok((hello, mut frames)) = reply_rx.await else {
        return;
    };
    let (mut sink, mut stream) = socket.split();
    let (errors_tx, mut errors_rx) = mpsc::unbounded_channel::<Outbound>();
    let writer = tokio::spawn(async move {
        if sink.send(Message::Text(hello.as_ref().into())).await.is_err() {
            return;
        }
        loop {
            let next = tokio::select! {
                biased;
                e = errors_rx.recv() => match e {
                    Some(e) => e,
                    None => break,
                },
                f = frames.recv() => match f {
                    Ok(f) => f,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        log::warn!("client fell behind by {n} messages");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if sink.send(Message::Text(next.as_ref().into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        match ClientMessage::parse(text.as_str()) {
            Ok(msg) => {
                if session.commands.send(Command::Client { msg, errors: errors_tx.clone() }).is_err() {
                    break;
                }
            }
            Err(e) => {
                let _ = errors_tx.send(Arc::from(ServerMessage::error(&e, None).to_json()));
            }
        }
    }
    drop(errors_tx);
    let _ = session.commands.send(Command::Leave);
    writer.abort();
}
