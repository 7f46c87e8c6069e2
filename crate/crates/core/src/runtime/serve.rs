//! HTTP control and event server.
//!
//! `GET /state` returns a hierarchy snapshot, `GET /events` streams trace
//! records as NDJSON, `POST /preferences` writes an operator preference
//! layer and `POST /control` pauses, resumes or single-steps the run. The
//! sequencer holds the session lock for a whole step, so every operator
//! mutation lands on a step boundary.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{watch, Notify};

use super::session::{write_artifacts, OPERATOR};
use super::{RunConfig, RuntimeError, Session, TraceSink};
use crate::agent::{AgentError, PreferenceFragment};
use crate::trace::to_jsonl;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Control {
    pub paused: bool,
    pub pending_steps: u64,
}

/// Shared between the sequencer and request handlers.
pub struct ServerState {
    session: Mutex<Session>,
    control: Mutex<Control>,
    sink: Mutex<Option<TraceSink>>,
    wake: Notify,
    records: watch::Sender<usize>,
    interval: Duration,
}

impl ServerState {
    pub fn new(session: Session, sink: Option<TraceSink>, interval: Duration, paused: bool) -> Arc<Self> {
        let (records, _) = watch::channel(session.trace().len());
        let state = Arc::new(Self {
            session: Mutex::new(session),
            control: Mutex::new(Control { paused, pending_steps: 0 }),
            sink: Mutex::new(sink),
            wake: Notify::new(),
            records,
            interval,
        });
        state.publish(&state.lock_session());
        state
    }

    pub fn lock_session(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn control(&self) -> Control {
        *self.control.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, session: &Session) {
        if let Some(sink) = self.sink.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            let _ = sink.flush(session.trace());
        }
        self.records.send_replace(session.trace().len());
    }

    /// Runs one step if the control state allows it. Returns `false` when
    /// the sequencer should wait.
    pub fn step_once(&self) -> Result<bool, RuntimeError> {
        {
            let mut c = self.control.lock().unwrap_or_else(|e| e.into_inner());
            if c.paused {
                if c.pending_steps == 0 {
                    return Ok(false);
                }
                c.pending_steps -= 1;
            }
        }
        let mut session = self.lock_session();
        let progressed = session.step()?;
        self.publish(&session);
        Ok(progressed)
    }

    fn apply_control(&self, command: &str) -> Result<Control, String> {
        let mut c = self.control.lock().unwrap_or_else(|e| e.into_inner());
        match command {
            "pause" => c.paused = true,
            "resume" => {
                c.paused = false;
                c.pending_steps = 0;
            }
            "step" => {
                c.paused = true;
                c.pending_steps += 1;
            }
            other => return Err(format!("unknown command '{other}'; expected pause, resume or step")),
        }
        Ok(*c)
    }
}

/// Drives the session until it finishes, honouring pause and step.
pub async fn run_sequencer(state: Arc<ServerState>) -> Result<(), RuntimeError> {
    loop {
        let st = state.clone();
        let stepped = tokio::task::spawn_blocking(move || st.step_once())
            .await
            .map_err(|e| RuntimeError::Io(e.to_string()))??;
        if state.lock_session().is_finished() {
            return Ok(());
        }
        if stepped {
            tokio::time::sleep(state.interval).await;
        } else {
            state.wake.notified().await;
        }
    }
}

fn error(status: StatusCode, kind: &str, message: String) -> Response {
    (status, Json(json!({"error": kind, "message": message}))).into_response()
}

async fn get_state(State(state): State<Arc<ServerState>>) -> Response {
    let paused = state.control().paused;
    Json(state.lock_session().snapshot(paused)).into_response()
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: usize,
    #[serde(default = "default_follow")]
    follow: bool,
}

fn default_follow() -> bool {
    true
}

async fn get_events(State(state): State<Arc<ServerState>>, Query(q): Query<EventsQuery>) -> Response {
    let rx = state.records.subscribe();
    let stream = futures_util::stream::unfold(Some((state, q.from, rx)), move |slot| async move {
        let (state, cursor, mut rx) = slot?;
        loop {
            let chunk = {
                let session = state.lock_session();
                let records = session.trace().records();
                (cursor < records.len()).then(|| (to_jsonl(&records[cursor..]), records.len()))
            };
            if let Some((text, next)) = chunk {
                return Some((Ok::<_, Infallible>(text), Some((state, next, rx))));
            }
            if !q.follow || rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(stream))
        .expect("static response parts")
}

#[derive(Debug, Deserialize)]
struct PreferenceRequest {
    agent_id: String,
    layer: usize,
    fragment: BTreeMap<String, f64>,
    #[serde(default = "default_precision")]
    precision: f64,
    #[serde(default)]
    hard_constraints: Vec<String>,
}

fn default_precision() -> f64 {
    1.0
}

async fn post_preferences(State(state): State<Arc<ServerState>>, Json(req): Json<PreferenceRequest>) -> Response {
    let mut fragment = PreferenceFragment::new(req.fragment, req.precision);
    fragment.hard_constraints = req.hard_constraints.into_iter().collect();
    let mut session = state.lock_session();
    let result = session.operator_preferences(&req.agent_id, req.layer, fragment);
    state.publish(&session);
    let agent = session.agents().into_iter().find(|a| a.id() == req.agent_id).map(|a| {
        (a.preferences().layer_hash(req.layer), a.preferences().layer0_hash())
    });
    drop(session);
    match result {
        Ok(()) => {
            let (after, layer0) = agent.unwrap_or_default();
            Json(json!({"ok": true, "layer": req.layer, "after_hash": after, "layer0_hash": layer0})).into_response()
        }
        Err(RuntimeError::Agent(AgentError::ImmutableLayer)) => {
            error(StatusCode::FORBIDDEN, "ImmutableLayer", AgentError::ImmutableLayer.to_string())
        }
        Err(RuntimeError::UnknownAgent(a)) => error(StatusCode::NOT_FOUND, "UnknownAgent", format!("unknown agent '{a}'")),
        Err(e @ RuntimeError::Agent(_)) => error(StatusCode::BAD_REQUEST, "InvalidPreference", e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct ControlRequest {
    command: String,
}

async fn post_control(State(state): State<Arc<ServerState>>, Json(req): Json<ControlRequest>) -> Response {
    let control = match state.apply_control(&req.command) {
        Ok(c) => c,
        Err(message) => return error(StatusCode::BAD_REQUEST, "UnknownCommand", message),
    };
    {
        let mut session = state.lock_session();
        session.record_operator(OPERATOR, json!({"control": req.command}));
        state.publish(&session);
    }
    state.wake.notify_one();
    Json(control).into_response()
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/events", get(get_events))
        .route("/preferences", post(post_preferences))
        .route("/control", post(post_control))
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub interval: Duration,
    pub paused: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { addr: SocketAddr::from(([127, 0, 0, 1], 8787)), interval: Duration::from_millis(100), paused: false }
    }
}

/// Serves a run until the process is stopped. Artifacts are written once
/// the scenario finishes; the endpoints stay up afterwards.
pub async fn serve(config: RunConfig, options: ServeOptions) -> Result<(), RuntimeError> {
    let session = Session::new(config.clone())?;
    std::fs::create_dir_all(&config.output).map_err(|e| RuntimeError::Io(e.to_string()))?;
    let sink = TraceSink::create(&config.output.join("trace.jsonl"))?;
    let state = ServerState::new(session, Some(sink), options.interval, options.paused);
    let listener = tokio::net::TcpListener::bind(options.addr).await.map_err(|e| RuntimeError::Io(e.to_string()))?;
    eprintln!("serving on http://{}", listener.local_addr().map_err(|e| RuntimeError::Io(e.to_string()))?);
    let seq_state = state.clone();
    let output = config.output.clone();
    tokio::spawn(async move {
        match run_sequencer(seq_state.clone()).await {
            Ok(()) => {
                let session = seq_state.lock_session();
                match write_artifacts(&session, &output) {
                    Ok(o) if o.ok() => eprintln!("run finished; artifacts in {}", output.display()),
                    Ok(o) => eprintln!("run finished with violations: {:?}", o.summary.violations),
                    Err(e) => eprintln!("writing artifacts failed: {e}"),
                }
            }
            Err(e) => eprintln!("run stopped: {e}"),
        }
    });
    axum::serve(listener, router(state)).await.map_err(|e| RuntimeError::Io(e.to_string()))
}
