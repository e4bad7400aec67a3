use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridsketch_core::agent::AgentError;
use gridsketch_core::grid::PixelPoint;
use gridsketch_core::render::{self, Rgb};
use gridsketch_core::session::{
    Mode, Party, Session, SessionConfig, SessionError, SessionLog, SessionStroke, Status, StoreError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast::error::RecvError;

use crate::state::AppState;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no session {0:?}")]
    NotFound(String),
    #[error("bad request body: {0}")]
    BadBody(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("worker task failed: {0}")]
    Task(#[from] tokio::task::JoinError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    pub retryable: bool,
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str) {
        use SessionError as S;
        match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            ApiError::BadBody(_) => (StatusCode::BAD_REQUEST, "bad-body"),
            ApiError::Session(e) => match e {
                S::BadMode(_) => (StatusCode::BAD_REQUEST, "bad-mode"),
                S::BadParty(_) => (StatusCode::BAD_REQUEST, "bad-party"),
                S::EmptyConcept => (StatusCode::BAD_REQUEST, "empty-concept"),
                S::EmptyStroke | S::InvalidPolyline => (StatusCode::BAD_REQUEST, "bad-stroke"),
                S::NotYourTurn { .. } => (StatusCode::CONFLICT, "not-your-turn"),
                S::SessionClosed => (StatusCode::CONFLICT, "session-closed"),
                S::WrongMode { .. } => (StatusCode::CONFLICT, "wrong-mode"),
                S::Agent(AgentError::Backend(_)) => (StatusCode::BAD_GATEWAY, "backend"),
                S::Agent(AgentError::ExhaustedRetries { .. }) => (StatusCode::BAD_GATEWAY, "unparsable-reply"),
                S::Agent(_) | S::AgentConfigMismatch | S::Transcript(_) => {
                    (StatusCode::INTERNAL_SERVER_ERROR, "internal")
                }
            },
            ApiError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
            ApiError::Task(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }

    pub fn retryable(&self) -> bool {
        matches!(self, ApiError::Session(e) if e.retryable())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = self.parts();
        if status.is_server_error() {
            log::warn!("{kind}: {self}");
        }
        let body = ErrorBody {
            error: kind.into(),
            message: self.to_string(),
            retryable: self.retryable(),
        };
        (status, Json(body)).into_response()
    }
}

/// A stroke as the client draws it. `path` is SVG path data in drawing-area
/// pixels; shift it by the session's `drawing_origin` to place it on the canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeView {
    pub index: usize,
    pub id: String,
    pub provenance: Party,
    pub color: Rgb,
    pub width: f64,
    pub path: String,
    pub points: Vec<String>,
    pub t: Vec<f64>,
}

impl StrokeView {
    fn new(index: usize, s: &SessionStroke) -> Self {
        Self {
            index,
            id: s.spec.id.clone(),
            provenance: s.provenance,
            color: s.style.color,
            width: s.style.width,
            path: render::path_data(&s.curve),
            points: s.spec.points.iter().map(ToString::to_string).collect(),
            t: s.spec.t_values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub mode: Mode,
    pub concept: String,
    pub status: Status,
    pub turn: Party,
    pub agent_done: bool,
    pub strokes_per_turn: usize,
    pub canvas_size: f64,
    pub drawing_origin: [f64; 2],
    pub strokes: Vec<StrokeView>,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        let grid = &s.config().grid;
        let origin = grid.drawing_origin();
        Self {
            id: s.id().to_string(),
            mode: s.mode(),
            concept: s.concept().to_string(),
            status: s.status(),
            turn: s.turn(),
            agent_done: s.agent_done(),
            strokes_per_turn: s.config().strokes_per_turn,
            canvas_size: grid.canvas_size(),
            drawing_origin: [origin.x, origin.y],
            strokes: s.strokes().iter().enumerate().map(|(i, st)| StrokeView::new(i, st)).collect(),
        }
    }
}

/// Pushed over `/sessions/{id}/events`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum StreamEvent {
    Stroke(StrokeView),
    Turn { turn: Party },
    AgentDone,
    Finalized,
}

impl StreamEvent {
    /// Events describing the step from `before` to `after`.
    pub fn diff(before: &Session, after: &Session) -> Vec<Self> {
        let mut out: Vec<Self> = after.strokes()[before.strokes().len()..]
            .iter()
            .enumerate()
            .map(|(k, s)| StreamEvent::Stroke(StrokeView::new(before.strokes().len() + k, s)))
            .collect();
        if after.agent_done() && !before.agent_done() {
            out.push(StreamEvent::AgentDone);
        }
        if after.turn() != before.turn() {
            out.push(StreamEvent::Turn { turn: after.turn() });
        }
        if after.status() == Status::Submitted && before.status() != Status::Submitted {
            out.push(StreamEvent::Finalized);
        }
        out
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub mode: String,
    pub concept: String,
    /// Who strokes first in collab mode, `user` by default.
    #[serde(default)]
    pub opening: Option<String>,
    #[serde(default)]
    pub strokes_per_turn: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StrokeBody {
    /// Pointer samples in canvas pixels, `[x, y]` with y pointing down.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct AgentTurnBody {
    #[serde(default)]
    pub strokes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EditBody {
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub added: Vec<StrokeView>,
    pub retries: u32,
    pub completed: bool,
    pub session: SessionView,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CanvasQuery {
    #[serde(default = "yes")]
    pub grid: bool,
}

fn yes() -> bool {
    true
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/strokes", post(submit_stroke))
        .route("/sessions/{id}/agent-turn", post(agent_turn))
        .route("/sessions/{id}/edit", post(edit))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/canvas.svg", get(canvas_svg))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let mode: Mode = body.mode.parse()?;
    let opening: Party = match &body.opening {
        Some(p) => p.parse()?,
        None => Party::User,
    };
    let config = SessionConfig {
        opening,
        strokes_per_turn: body.strokes_per_turn.unwrap_or(state.strokes_per_turn()).max(1),
        ..SessionConfig::for_agent(state.agent())
    };
    let session = Session::new(mode, &body.concept, config)?;
    let view = SessionView::from(&session);
    state.insert(session).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let slot = state.slot(&id).await?;
    Ok(Json(SessionView::from(&slot.snapshot())))
}

async fn get_log(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionLog>, ApiError> {
    let slot = state.slot(&id).await?;
    Ok(Json(slot.snapshot().log()))
}

async fn submit_stroke(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<StrokeBody>,
) -> Result<Json<SessionView>, ApiError> {
    let line: Vec<PixelPoint> = body.points.iter().map(|&[x, y]| PixelPoint::new(x, y)).collect();
    let ((), after) = state
        .mutate(&id, move |s, _| {
            // Pointer input arrives in canvas pixels; strokes live in the
            // drawing area.
            let origin = s.config().grid.drawing_origin();
            let local: Vec<PixelPoint> = line.iter().map(|p| PixelPoint::new(p.x - origin.x, p.y - origin.y)).collect();
            s.submit_user_stroke(&local).map(|_| ())
        })
        .await?;
    Ok(Json(SessionView::from(&after)))
}

async fn agent_turn(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TurnResponse>, ApiError> {
    // The body is optional; an empty one means the configured stroke count.
    let j = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        serde_json::from_slice::<AgentTurnBody>(&body)
            .map_err(|e| ApiError::BadBody(e.to_string()))?
            .strokes
    };
    let (outcome, after) = state.mutate(&id, move |s, agent| s.request_agent_turn(agent, j)).await?;
    Ok(Json(turn_response(outcome, &after)))
}

async fn edit(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<EditBody>,
) -> Result<Json<TurnResponse>, ApiError> {
    let (outcome, after) = state.mutate(&id, move |s, agent| s.edit(agent, &body.instruction)).await?;
    Ok(Json(turn_response(outcome, &after)))
}

fn turn_response(outcome: gridsketch_core::session::TurnOutcome, after: &Session) -> TurnResponse {
    TurnResponse {
        added: outcome.added.clone().map(|i| StrokeView::new(i, &after.strokes()[i])).collect(),
        retries: outcome.retries,
        completed: outcome.completed,
        session: SessionView::from(after),
    }
}

async fn finalize(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionLog>, ApiError> {
    let (log, _) = state.mutate(&id, |s, _| s.finalize()).await?;
    Ok(Json(log))
}

async fn canvas_svg(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<CanvasQuery>,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id).await?;
    let svg = slot.snapshot().canvas(q.grid).svg;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id).await?;
    let rx = slot.subscribe();
    let closing = state.closing();
    Ok(ws.on_upgrade(move |socket| stream_events(socket, rx, closing)))
}

async fn stream_events(
    mut socket: WebSocket,
    mut rx: tokio::sync::broadcast::Receiver<StreamEvent>,
    closing: tokio::sync::watch::Receiver<bool>,
) {
    let closed = shut_down(closing);
    tokio::pin!(closed);
    loop {
        tokio::select! {
            event = rx.recv() => match event {
                Ok(event) => {
                    let text = serde_json::to_string(&event).expect("events always serialize");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                // The client missed events; it has to refetch the session.
                Err(RecvError::Lagged(_)) | Err(RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            _ = &mut closed => break,
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

async fn shut_down(mut closing: tokio::sync::watch::Receiver<bool>) {
    let _ = closing.wait_for(|c| *c).await;
}
