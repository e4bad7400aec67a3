//! Sketching sessions: solo and turn-based collaborative drawing, event
//! logs, replay and on-disk persistence.
//!
//! Every operation validates and computes first and only then mutates, so an
//! operation that returns an error leaves the session as it was.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError, AgentTurn, Message, SessionView, Transcript, TranscriptError};
use crate::curvefit::{fit_stroke, invert_user_stroke_with_curve, FitError, FitReport, FitTolerance, PolyBezier};
use crate::grid::{GridConfig, PixelPoint};
use crate::render::{self, RenderError, RenderedCanvas, StrokeStyle, StyledStroke};
use crate::sketchlang::StrokeSpec;

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SoloUser,
    SoloAgent,
    Collab,
}

impl FromStr for Mode {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solo-user" => Ok(Mode::SoloUser),
            "solo-agent" => Ok(Mode::SoloAgent),
            "collab" => Ok(Mode::Collab),
            other => Err(SessionError::BadMode(other.to_string())),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::SoloUser => "solo-user",
            Mode::SoloAgent => "solo-agent",
            Mode::Collab => "collab",
        })
    }
}

/// Who drew a stroke, and whose turn it is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    User,
    Agent,
}

impl Party {
    pub fn other(self) -> Self {
        match self {
            Party::User => Party::Agent,
            Party::Agent => Party::User,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::User => "user",
            Party::Agent => "agent",
        })
    }
}

impl FromStr for Party {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(Party::User),
            "agent" => Ok(Party::Agent),
            other => Err(SessionError::BadParty(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Submitted,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("unknown mode {0:?}; expected solo-user, solo-agent or collab")]
    BadMode(String),
    #[error("unknown party {0:?}; expected user or agent")]
    BadParty(String),
    #[error("concept must not be empty")]
    EmptyConcept,
    #[error("it is the {turn}'s turn")]
    NotYourTurn { turn: Party },
    #[error("{op} is not available in {mode} mode")]
    WrongMode { mode: Mode, op: &'static str },
    #[error("session is submitted and can no longer change")]
    SessionClosed,
    #[error("stroke has no points")]
    EmptyStroke,
    #[error("stroke contains a non-finite coordinate")]
    InvalidPolyline,
    #[error("the agent's grid or fit tolerance differs from the session's")]
    AgentConfigMismatch,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

impl SessionError {
    /// Whether the same request may succeed later without any change.
    pub fn retryable(&self) -> bool {
        matches!(self, SessionError::Agent(e) if e.retryable())
    }
}

/// Per-session settings, stored in the log so replay needs nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub grid: GridConfig,
    pub tolerance: FitTolerance,
    pub user_tolerance: FitTolerance,
    /// Who strokes first in collab mode.
    pub opening: Party,
    pub strokes_per_turn: usize,
    pub user_style: StrokeStyle,
    pub agent_style: StrokeStyle,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self::for_grid(GridConfig::default())
    }
}

impl SessionConfig {
    pub fn for_grid(grid: GridConfig) -> Self {
        Self {
            tolerance: FitTolerance::for_grid(&grid),
            user_tolerance: FitTolerance::for_user_ink(&grid),
            grid,
            opening: Party::User,
            strokes_per_turn: 1,
            user_style: StrokeStyle::user(),
            agent_style: StrokeStyle::agent(),
        }
    }

    /// Matching grid and tolerance for `agent`.
    pub fn for_agent(agent: &Agent) -> Self {
        Self {
            tolerance: agent.tolerance,
            ..Self::for_grid(agent.grid.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStroke {
    pub spec: StrokeSpec,
    pub provenance: Party,
    pub style: StrokeStyle,
    pub curve: PolyBezier,
    pub report: FitReport,
    /// Raw pointer input for user strokes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polyline: Option<Vec<PixelPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SessionEvent {
    Created {
        mode: Mode,
        concept: String,
    },
    StrokeAdded {
        index: usize,
        provenance: Party,
        stroke: StrokeSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        polyline: Option<Vec<PixelPoint>>,
    },
    TurnChanged {
        turn: Party,
    },
    Retries {
        count: u32,
    },
    Edit {
        instruction: String,
        added: usize,
    },
    AgentDone,
    Finalized,
}

/// Result of one agent call on a session.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    /// Indices of the strokes added.
    pub added: std::ops::Range<usize>,
    pub retries: u32,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    id: String,
    mode: Mode,
    concept: String,
    config: SessionConfig,
    transcript: Transcript,
    strokes: Vec<SessionStroke>,
    turn: Party,
    status: Status,
    agent_done: bool,
    events: Vec<SessionEvent>,
}

impl Session {
    pub fn new(mode: Mode, concept: &str, config: SessionConfig) -> Result<Self, SessionError> {
        Self::with_id(uuid::Uuid::new_v4().to_string(), mode, concept, config)
    }

    pub fn with_id(id: String, mode: Mode, concept: &str, config: SessionConfig) -> Result<Self, SessionError> {
        let concept = concept.trim();
        if concept.is_empty() {
            return Err(SessionError::EmptyConcept);
        }
        let turn = match mode {
            Mode::Collab => config.opening,
            Mode::SoloUser => Party::User,
            Mode::SoloAgent => Party::Agent,
        };
        Ok(Self {
            id,
            mode,
            concept: concept.to_string(),
            config,
            transcript: Transcript::default(),
            strokes: Vec::new(),
            turn,
            status: Status::Active,
            agent_done: false,
            events: vec![SessionEvent::Created {
                mode,
                concept: concept.to_string(),
            }],
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn concept(&self) -> &str {
        &self.concept
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn strokes(&self) -> &[SessionStroke] {
        &self.strokes
    }

    pub fn turn(&self) -> Party {
        self.turn
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn agent_done(&self) -> bool {
        self.agent_done
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn stroke_specs(&self) -> Vec<StrokeSpec> {
        self.strokes.iter().map(|s| s.spec.clone()).collect()
    }

    fn ensure_active(&self) -> Result<(), SessionError> {
        match self.status {
            Status::Active => Ok(()),
            Status::Submitted => Err(SessionError::SessionClosed),
        }
    }

    fn ensure_turn(&self, party: Party, op: &'static str) -> Result<(), SessionError> {
        self.ensure_active()?;
        let allowed = matches!(
            (self.mode, party),
            (Mode::SoloUser, Party::User) | (Mode::SoloAgent, Party::Agent) | (Mode::Collab, _)
        );
        if !allowed {
            return Err(SessionError::WrongMode { mode: self.mode, op });
        }
        if self.mode == Mode::Collab && self.turn != party {
            return Err(SessionError::NotYourTurn { turn: self.turn });
        }
        Ok(())
    }

    fn check_agent(&self, agent: &Agent) -> Result<(), SessionError> {
        if agent.grid != self.config.grid || agent.tolerance != self.config.tolerance {
            return Err(SessionError::AgentConfigMismatch);
        }
        Ok(())
    }

    fn end_turn(&mut self) {
        if self.mode == Mode::Collab {
            self.turn = self.turn.other();
            self.events.push(SessionEvent::TurnChanged { turn: self.turn });
        }
    }

    fn push_stroke(&mut self, stroke: SessionStroke) {
        self.events.push(SessionEvent::StrokeAdded {
            index: self.strokes.len(),
            provenance: stroke.provenance,
            stroke: stroke.spec.clone(),
            polyline: stroke.polyline.clone(),
        });
        self.strokes.push(stroke);
    }

    fn user_stroke(&self, polyline: &[PixelPoint]) -> Result<SessionStroke, SessionError> {
        if polyline.is_empty() {
            return Err(SessionError::EmptyStroke);
        }
        if !polyline.iter().all(|p| p.is_finite()) {
            return Err(SessionError::InvalidPolyline);
        }
        let n = self.strokes.iter().filter(|s| s.provenance == Party::User).count();
        Ok(user_stroke(polyline, n + 1, &self.config))
    }

    /// Add a freehand stroke drawn by the user.
    pub fn submit_user_stroke(&mut self, polyline: &[PixelPoint]) -> Result<&SessionStroke, SessionError> {
        self.ensure_turn(Party::User, "submitting a user stroke")?;
        let stroke = self.user_stroke(polyline)?;
        self.push_stroke(stroke);
        self.end_turn();
        Ok(self.strokes.last().unwrap())
    }

    fn view<'a>(&'a self, specs: &'a [StrokeSpec], canvas: &'a RenderedCanvas) -> SessionView<'a> {
        SessionView {
            concept: &self.concept,
            transcript: &self.transcript,
            strokes: specs,
            canvas,
        }
    }

    fn commit_agent(&mut self, turn: AgentTurn) -> Result<TurnOutcome, SessionError> {
        let mut transcript = self.transcript.clone();
        if transcript.is_empty() {
            transcript.system = turn.system.clone();
        }
        for m in turn.messages {
            transcript.push(m)?;
        }
        self.transcript = transcript;
        if turn.retries > 0 {
            self.events.push(SessionEvent::Retries { count: turn.retries });
        }
        let start = self.strokes.len();
        let style = self.config.agent_style;
        for ((spec, curve), report) in turn.strokes.into_iter().zip(turn.curves).zip(turn.reports) {
            self.push_stroke(SessionStroke {
                spec,
                provenance: Party::Agent,
                style,
                curve,
                report,
                polyline: None,
            });
        }
        if turn.completed {
            self.agent_done = true;
            self.events.push(SessionEvent::AgentDone);
        }
        Ok(TurnOutcome {
            added: start..self.strokes.len(),
            retries: turn.retries,
            completed: turn.completed,
        })
    }

    /// Let the agent add up to `j` strokes (the configured default when
    /// `None`). The agent may instead signal that it considers the sketch
    /// complete, in which case nothing is added.
    pub fn request_agent_turn(&mut self, agent: &Agent, j: Option<usize>) -> Result<TurnOutcome, SessionError> {
        self.ensure_turn(Party::Agent, "an agent turn")?;
        self.check_agent(agent)?;
        let j = j.unwrap_or(self.config.strokes_per_turn).max(1);
        let specs = self.stroke_specs();
        let canvas = self.canvas(true);
        let turn = agent.continue_collab(self.view(&specs, &canvas), j)?;
        let outcome = self.commit_agent(turn)?;
        self.end_turn();
        Ok(outcome)
    }

    /// One-shot generation on an empty solo-agent session.
    pub fn generate(&mut self, agent: &Agent) -> Result<TurnOutcome, SessionError> {
        self.ensure_turn(Party::Agent, "one-shot generation")?;
        if self.mode != Mode::SoloAgent || !self.strokes.is_empty() || !self.transcript.is_empty() {
            return Err(SessionError::WrongMode {
                mode: self.mode,
                op: "one-shot generation on a started session",
            });
        }
        self.check_agent(agent)?;
        let g = agent.generate_sketch(&self.concept)?;
        self.commit_agent(AgentTurn {
            system: g.transcript.system,
            strokes: g.sketch.strokes,
            curves: g.curves,
            reports: g.reports,
            messages: g.transcript.messages,
            retries: g.retries,
            thinking: g.thinking,
            completed: false,
        })
    }

    /// Chat-based editing: the agent adds strokes following `instruction`.
    pub fn edit(&mut self, agent: &Agent, instruction: &str) -> Result<TurnOutcome, SessionError> {
        self.ensure_turn(Party::Agent, "editing")?;
        self.check_agent(agent)?;
        let specs = self.stroke_specs();
        let canvas = self.canvas(true);
        let turn = agent.edit_sketch(self.view(&specs, &canvas), instruction)?;
        let mut next = self.clone();
        let outcome = next.commit_agent(turn)?;
        next.events.push(SessionEvent::Edit {
            instruction: instruction.to_string(),
            added: outcome.added.len(),
        });
        next.end_turn();
        *self = next;
        Ok(outcome)
    }

    /// Close the session and return its log.
    pub fn finalize(&mut self) -> Result<SessionLog, SessionError> {
        self.ensure_active()?;
        self.status = Status::Submitted;
        self.events.push(SessionEvent::Finalized);
        Ok(self.log())
    }

    fn styled(&self) -> Vec<StyledStroke<'_>> {
        self.strokes.iter().map(|s| (&s.curve, &s.style)).collect()
    }

    pub fn canvas(&self, with_grid: bool) -> RenderedCanvas {
        render::to_svg(&self.styled(), &self.config.grid, with_grid)
    }

    pub fn frames(&self, with_grid: bool) -> Vec<RenderedCanvas> {
        render::replay_frames(&self.styled(), &self.config.grid, with_grid)
    }

    pub fn animated(&self, with_grid: bool, seconds_per_stroke: f64) -> RenderedCanvas {
        render::animated_svg(&self.styled(), &self.config.grid, with_grid, seconds_per_stroke)
    }

    pub fn log(&self) -> SessionLog {
        SessionLog {
            version: LOG_VERSION,
            id: self.id.clone(),
            mode: self.mode,
            concept: self.concept.clone(),
            status: self.status,
            turn: self.turn,
            config: self.config.clone(),
            events: self.events.clone(),
            transcript: self.transcript.clone(),
            final_svg: self.canvas(false).svg,
        }
    }

    /// The transcript text the agent last produced, for inspection.
    pub fn last_reply(&self) -> Option<&Message> {
        self.transcript.last_assistant()
    }
}

fn user_stroke(polyline: &[PixelPoint], k: usize, config: &SessionConfig) -> SessionStroke {
    let (mut spec, mut curve) = invert_user_stroke_with_curve(polyline, &config.grid, &config.user_tolerance);
    spec.id = format!("user stroke {k}");
    curve.source_id = spec.id.clone();
    SessionStroke {
        spec,
        provenance: Party::User,
        style: config.user_style,
        curve,
        report: FitReport::default(),
        polyline: Some(polyline.to_vec()),
    }
}

/// Everything needed to reproduce a session: configuration, the ordered
/// events and the transcript. The final SVG is stored for verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub version: u32,
    pub id: String,
    pub mode: Mode,
    pub concept: String,
    pub status: Status,
    pub turn: Party,
    pub config: SessionConfig,
    pub events: Vec<SessionEvent>,
    pub transcript: Transcript,
    /// Canvas without the grid.
    pub final_svg: String,
}

impl SessionLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session logs always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ReplayError> {
        let log: Self = serde_json::from_str(text).map_err(|e| ReplayError::Schema(e.to_string()))?;
        if log.version != LOG_VERSION {
            return Err(ReplayError::Schema(format!("unsupported log version {}", log.version)));
        }
        Ok(log)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("invalid session log: {0}")]
    Schema(String),
    #[error("event {index}: {detail}")]
    BadEvent { index: usize, detail: String },
    #[error("event {index}: {source}")]
    Fit { index: usize, source: FitError },
    #[error("replayed canvas differs from the stored final SVG")]
    Mismatch,
}

/// Rebuild a session from its log without consulting any backend: agent
/// strokes are refitted from their specs, user strokes from their pointer
/// input.
pub fn replay(log: &SessionLog) -> Result<Session, ReplayError> {
    let bad = |index: usize, detail: &str| ReplayError::BadEvent {
        index,
        detail: detail.to_string(),
    };
    let mut events = log.events.iter().enumerate();
    match events.next() {
        Some((_, SessionEvent::Created { mode, concept })) if *mode == log.mode && *concept == log.concept => {}
        _ => return Err(bad(0, "log must start with a matching created event")),
    }
    let mut s = Session::with_id(log.id.clone(), log.mode, &log.concept, log.config.clone())
        .map_err(|e| bad(0, &e.to_string()))?;
    for (i, event) in events {
        if s.status == Status::Submitted {
            return Err(bad(i, "event after finalization"));
        }
        match event {
            SessionEvent::Created { .. } => return Err(bad(i, "duplicate created event")),
            SessionEvent::StrokeAdded {
                index,
                provenance,
                stroke,
                polyline,
            } => {
                if *index != s.strokes.len() {
                    return Err(bad(i, "stroke index out of sequence"));
                }
                let rebuilt = match (provenance, polyline) {
                    (Party::User, Some(line)) => {
                        let mut r = user_stroke(line, 0, &s.config);
                        r.spec.id = stroke.id.clone();
                        r.curve.source_id = stroke.id.clone();
                        if r.spec != *stroke {
                            return Err(bad(i, "user stroke does not match its pointer input"));
                        }
                        r
                    }
                    (Party::User, None) => return Err(bad(i, "user stroke without pointer input")),
                    (Party::Agent, _) => {
                        let (curve, report) = fit_stroke(stroke, &s.config.grid, &s.config.tolerance)
                            .map_err(|source| ReplayError::Fit { index: i, source })?;
                        SessionStroke {
                            spec: stroke.clone(),
                            provenance: Party::Agent,
                            style: s.config.agent_style,
                            curve,
                            report,
                            polyline: None,
                        }
                    }
                };
                s.push_stroke(rebuilt);
            }
            SessionEvent::TurnChanged { turn } => {
                s.turn = *turn;
                s.events.push(event.clone());
            }
            SessionEvent::AgentDone => {
                s.agent_done = true;
                s.events.push(event.clone());
            }
            SessionEvent::Finalized => {
                s.status = Status::Submitted;
                s.events.push(event.clone());
            }
            SessionEvent::Retries { .. } | SessionEvent::Edit { .. } => s.events.push(event.clone()),
        }
    }
    s.transcript = log.transcript.clone();
    Ok(s)
}

/// Replay and compare against the stored final SVG byte for byte.
pub fn verify_replay(log: &SessionLog) -> Result<Session, ReplayError> {
    let s = replay(log)?;
    if s.canvas(false).svg != log.final_svg {
        return Err(ReplayError::Mismatch);
    }
    Ok(s)
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// One JSON log per session in a directory, plus SVG and PNG exports of
/// finalized sessions.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn write(&self, path: PathBuf, data: &[u8]) -> Result<(), StoreError> {
        // Write then rename so a crash never leaves a half-written log.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, data)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|source| StoreError::Io { path, source })
    }

    /// Write the session log; finalized sessions also get SVG and PNG exports.
    pub fn save(&self, session: &Session) -> Result<PathBuf, StoreError> {
        let log = session.log();
        let path = self.log_path(session.id());
        self.write(path.clone(), log.to_json().as_bytes())?;
        if session.status() == Status::Submitted {
            let canvas = session.canvas(false);
            self.write(self.dir.join(format!("{}.svg", session.id())), canvas.svg.as_bytes())?;
            let png = render::rasterize(&canvas, 1.0)?;
            self.write(self.dir.join(format!("{}.png", session.id())), &png)?;
        }
        Ok(path)
    }

    pub fn load(&self, id: &str) -> Result<SessionLog, StoreError> {
        let path = self.log_path(id);
        let text = std::fs::read_to_string(&path).map_err(|source| StoreError::Io { path, source })?;
        Ok(SessionLog::from_json(&text)?)
    }
}
