//! The `gridsketch` command line: one-shot drawing, batches, log replay,
//! the session service and blank grids.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gridsketch_core::agent::{Agent, AgentError, BackendConfig, BackendKind, PromptOptions, PromptTemplates};
use gridsketch_core::grid::{render_grid_background, GridConfig};
use gridsketch_core::render::{self, RenderedCanvas, StrokeStyle};
use gridsketch_core::session::{
    verify_replay, Mode, Session, SessionConfig, SessionError, SessionEvent, SessionLog, SessionStore,
};
use gridsketch_core::sketchlang::SketchSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "gridsketch", version, about = "Sketching with an LLM on a numbered grid")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one concept and write the sketch, its transcript and replay frames.
    Draw(DrawArgs),
    /// Draw every concept of a file several times.
    Batch(BatchArgs),
    /// Rebuild a session log into frames and an animated SVG.
    Replay(ReplayArgs),
    /// Run the HTTP/WebSocket session service.
    Serve(ServeArgs),
    /// Write the blank numbered grid.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridFlags {
    /// Cells per axis.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..=1000))]
    pub resolution: u32,
    /// Pixels per cell side.
    #[arg(long, default_value_t = 12.0, value_parser = positive)]
    pub cell_size: f64,
}

impl Default for GridFlags {
    fn default() -> Self {
        Self {
            resolution: 50,
            cell_size: 12.0,
        }
    }
}

impl GridFlags {
    pub fn config(&self) -> GridConfig {
        GridConfig::new(self.resolution, self.cell_size)
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn backend_kind(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: gridsketch_core::agent::BackendError| e.to_string())
}

/// Backend, prompt and grid settings shared by the drawing commands.
#[derive(Debug, Clone, Default, Args)]
pub struct AgentArgs {
    /// mock-house, cassette, anthropic or openai. Overrides the config file.
    #[arg(long, value_parser = backend_kind)]
    pub backend: Option<BackendKind>,
    /// Backend settings (TOML).
    #[arg(long, value_name = "FILE")]
    pub backend_config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Recorded replies for the cassette backend.
    #[arg(long, value_name = "FILE")]
    pub cassette: Option<PathBuf>,
    /// Send no system prompt.
    #[arg(long)]
    pub no_system_prompt: bool,
    /// Drop the chain-of-thought instructions from the user prompt.
    #[arg(long)]
    pub no_cot: bool,
    /// Replace the in-context example with the contents of FILE.
    #[arg(long, value_name = "FILE")]
    pub icl: Option<PathBuf>,
    /// Load prompt templates from DIR instead of the bundled ones.
    #[arg(long, value_name = "DIR")]
    pub prompts: Option<PathBuf>,
    /// Corrective retries after an unparsable reply.
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Greedy decoding (temperature 0, top-k 1).
    #[arg(long)]
    pub deterministic: bool,
    #[command(flatten)]
    pub grid: GridFlags,
}

impl AgentArgs {
    pub fn backend_config(&self) -> Result<BackendConfig, CliError> {
        let mut cfg = match &self.backend_config {
            Some(path) => BackendConfig::load(path).map_err(|e| CliError::runtime("config", e))?,
            None => BackendConfig::default(),
        };
        if let Some(kind) = self.backend {
            cfg.backend = kind;
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(c) = &self.cassette {
            cfg.cassette = Some(c.clone());
        }
        if let Some(n) = self.max_retries {
            cfg.max_retries = n;
        }
        if self.deterministic {
            cfg = cfg.deterministic();
        }
        Ok(cfg)
    }

    pub fn build(&self) -> Result<Agent, CliError> {
        let cfg = self.backend_config()?;
        let icl = match &self.icl {
            Some(path) => Some(read_text(path)?),
            None => None,
        };
        let mut agent = Agent::from_config(&cfg)
            .map_err(|e| CliError::runtime("config", e))?
            .with_grid(self.grid.config())
            .with_prompt_options(PromptOptions {
                system_prompt: !self.no_system_prompt,
                chain_of_thought: !self.no_cot,
                icl_example: icl,
            });
        if let Some(dir) = &self.prompts {
            agent.templates = PromptTemplates::from_dir(dir).map_err(|e| CliError::runtime("config", e))?;
        }
        // Fail on a broken prompt setup before any request is made.
        agent.prompts("sketch").map_err(|e| CliError::runtime("prompt", e))?;
        Ok(agent)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DrawArgs {
    /// What to draw, e.g. "house".
    pub concept: String,
    /// Output directory.
    #[arg(short, long, default_value = "sketch")]
    pub out: PathBuf,
    /// Editing instruction applied after drawing; repeatable.
    #[arg(long = "edit", value_name = "INSTRUCTION")]
    pub edits: Vec<String>,
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    /// Text file with one concept per line; `#` starts a comment.
    pub concepts: PathBuf,
    /// Sketches per concept.
    #[arg(short = 'n', long, default_value_t = 10)]
    pub per_concept: usize,
    #[arg(short, long, default_value = "batch")]
    pub out: PathBuf,
    /// Sketches drawn at the same time.
    #[arg(short, long, default_value_t = 4)]
    pub jobs: usize,
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A session log (`session.json` from `draw`, or a service log).
    pub log: PathBuf,
    #[arg(short, long, default_value = "replay")]
    pub out: PathBuf,
    /// Draw the numbered grid under the strokes.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    pub seconds_per_stroke: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Service settings (TOML).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    #[arg(long, value_name = "DIR")]
    pub session_dir: Option<PathBuf>,
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(short, long, default_value = "grid.svg")]
    pub out: PathBuf,
    /// Also write a PNG.
    #[arg(long, value_name = "FILE")]
    pub png: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridFlags,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Runtime { category: &'static str, message: String },
}

impl CliError {
    pub fn runtime(category: &'static str, e: impl fmt::Display) -> Self {
        CliError::Runtime {
            category,
            message: e.to_string(),
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime { category, .. } => category,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        let category = match &e {
            SessionError::EmptyConcept | SessionError::BadMode(_) => return CliError::Usage(e.to_string()),
            SessionError::Agent(AgentError::Backend(_)) => "backend",
            SessionError::Agent(AgentError::ExhaustedRetries { .. }) => "parse",
            SessionError::Agent(AgentError::Prompt(_)) => "prompt",
            SessionError::Agent(AgentError::Fit(_)) => "fit",
            SessionError::Agent(AgentError::Render(_)) => "render",
            _ => "session",
        };
        CliError::runtime(category, e)
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, data).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))
}

fn png(canvas: &RenderedCanvas) -> Result<Vec<u8>, CliError> {
    render::rasterize(canvas, 1.0).map_err(|e| CliError::runtime("render", e))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data always serializes")
}

fn write_frames(dir: &Path, frames: &[RenderedCanvas]) -> Result<(), CliError> {
    let frames_dir = dir.join("frames");
    create_dir(&frames_dir)?;
    for (k, frame) in frames.iter().enumerate() {
        write(&frames_dir.join(format!("frame_{k:03}.svg")), &frame.svg)?;
    }
    Ok(())
}

/// What `draw` wrote, also stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawManifest {
    pub concept: String,
    pub backend: String,
    pub model: String,
    pub strokes: usize,
    pub retries: u32,
    pub edits: Vec<String>,
    pub files: Vec<String>,
}

/// Draw `concept`, apply any edits, and write everything under `args.out`:
/// `sketch.svg` and `sketch.png` (black ink, no grid), `canvas.svg` (with
/// the grid), `sketch.json`, `transcript.json`, `session.json` (a
/// replayable log), `frames/`, `replay.svg` and `manifest.json`.
pub fn cmd_draw(args: &DrawArgs) -> Result<DrawManifest, CliError> {
    if args.concept.trim().is_empty() {
        return Err(CliError::Usage("concept must not be empty".into()));
    }
    let agent = args.agent.build()?;
    let backend = args.agent.backend_config()?;
    draw_with(&agent, &backend, &args.concept, &args.edits, &args.out)
}

fn draw_with(
    agent: &Agent,
    backend: &BackendConfig,
    concept: &str,
    edits: &[String],
    out: &Path,
) -> Result<DrawManifest, CliError> {
    let config = SessionConfig {
        agent_style: StrokeStyle::default(),
        ..SessionConfig::for_agent(agent)
    };
    let mut session = Session::new(Mode::SoloAgent, concept, config)?;
    session.generate(agent)?;
    for instruction in edits {
        session.edit(agent, instruction)?;
    }
    let log = session.finalize()?;

    create_dir(out)?;
    let sketch = session.canvas(false);
    write(&out.join("sketch.svg"), &sketch.svg)?;
    write(&out.join("sketch.png"), png(&sketch)?)?;
    write(&out.join("canvas.svg"), session.canvas(true).svg)?;
    let spec = SketchSpec {
        concept: concept.trim().to_string(),
        strokes: session.stroke_specs(),
    };
    write(&out.join("sketch.json"), to_json(&spec))?;
    write(&out.join("transcript.json"), to_json(session.transcript()))?;
    write(&out.join("session.json"), log.to_json())?;
    write_frames(out, &session.frames(false))?;
    write(&out.join("replay.svg"), session.animated(false, 0.5).svg)?;

    let retries = log
        .events
        .iter()
        .map(|e| match e {
            SessionEvent::Retries { count } => *count,
            _ => 0,
        })
        .sum();
    let manifest = DrawManifest {
        concept: spec.concept,
        backend: agent.backend().name().to_string(),
        model: backend.model.clone(),
        strokes: session.strokes().len(),
        retries,
        edits: edits.to_vec(),
        files: [
            "sketch.svg",
            "sketch.png",
            "canvas.svg",
            "sketch.json",
            "transcript.json",
            "session.json",
            "frames/",
            "replay.svg",
        ]
        .map(String::from)
        .to_vec(),
    };
    write(&out.join("manifest.json"), to_json(&manifest))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRun {
    pub concept: String,
    pub index: usize,
    pub dir: PathBuf,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strokes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub count: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub runs: Vec<BatchRun>,
}

/// Directory-safe form of a concept.
pub fn slug(concept: &str) -> String {
    let mut out = String::new();
    for c in concept.trim().chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let out = out.trim_matches('-').to_string();
    if out.is_empty() {
        "concept".into()
    } else {
        out
    }
}

pub fn read_concepts(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Draw `per_concept` sketches of every concept into
/// `{out}/{concept}/{k}/`. Failures are recorded in the manifest and do not
/// stop the batch; the command fails only when nothing succeeded.
pub fn cmd_batch(args: &BatchArgs) -> Result<BatchManifest, CliError> {
    let concepts = read_concepts(&args.concepts)?;
    if concepts.is_empty() {
        return Err(CliError::runtime("io", format!("{}: no concepts", args.concepts.display())));
    }
    let backend = args.agent.backend_config()?;
    // Validate the setup once before fanning out.
    args.agent.build()?;
    create_dir(&args.out)?;

    let jobs: Vec<(String, usize)> = concepts
        .iter()
        .flat_map(|c| (0..args.per_concept).map(move |k| (c.clone(), k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| CliError::runtime("batch", e))?;
    let runs: Vec<BatchRun> = pool.install(|| {
        jobs.par_iter()
            .map(|(concept, k)| {
                let dir = args.out.join(slug(concept)).join(k.to_string());
                // Each job gets its own agent and session.
                let result = args
                    .agent
                    .build()
                    .and_then(|agent| draw_with(&agent, &backend, concept, &[], &dir));
                match result {
                    Ok(m) => BatchRun {
                        concept: concept.clone(),
                        index: *k,
                        dir,
                        ok: true,
                        strokes: Some(m.strokes),
                        error: None,
                    },
                    Err(e) => {
                        log::warn!("{concept} #{k}: {e}");
                        BatchRun {
                            concept: concept.clone(),
                            index: *k,
                            dir,
                            ok: false,
                            strokes: None,
                            error: Some(format!("{}: {e}", e.category())),
                        }
                    }
                }
            })
            .collect()
    });
    let succeeded = runs.iter().filter(|r| r.ok).count();
    let manifest = BatchManifest {
        count: runs.len(),
        succeeded,
        failed: runs.len() - succeeded,
        runs,
    };
    write(&args.out.join("manifest.json"), to_json(&manifest))?;
    if succeeded == 0 {
        return Err(CliError::runtime("batch", "no sketch succeeded"));
    }
    Ok(manifest)
}

/// Rebuild a log, check it against its stored final SVG, and write
/// `frames/` (one per stroke plus the blank canvas), `replay.svg` and
/// `final.svg`. Returns the number of frames.
pub fn cmd_replay(args: &ReplayArgs) -> Result<usize, CliError> {
    let log = SessionLog::from_json(&read_text(&args.log)?).map_err(|e| CliError::runtime("replay", e))?;
    let session = verify_replay(&log).map_err(|e| CliError::runtime("replay", e))?;
    create_dir(&args.out)?;
    let frames = session.frames(args.grid);
    write_frames(&args.out, &frames)?;
    write(&args.out.join("replay.svg"), session.animated(args.grid, args.seconds_per_stroke).svg)?;
    write(&args.out.join("final.svg"), session.canvas(args.grid).svg)?;
    Ok(frames.len())
}

pub fn cmd_grid(args: &GridArgs) -> Result<(), CliError> {
    let canvas = render_grid_background(&args.grid.config());
    write(&args.out, &canvas.svg)?;
    if let Some(path) = &args.png {
        write(path, png(&canvas)?)?;
    }
    Ok(())
}

/// Serve until ctrl-c or SIGTERM. Prints `listening on http://{addr}` once
/// the socket is bound.
pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    use gridsketch_server::{serve, shutdown_signal, AppState, ServerConfig};

    let mut cfg = match &args.config {
        Some(path) => ServerConfig::load(path).map_err(|e| CliError::runtime("config", e))?,
        None => ServerConfig::default(),
    };
    if let Some(addr) = args.listen {
        cfg.listen = addr;
    }
    if let Some(dir) = &args.session_dir {
        cfg.session_dir = dir.clone();
    }
    let mut agent_args = args.agent.clone();
    if agent_args.backend_config.is_none() {
        agent_args.backend_config = cfg.backend_config.clone();
    }
    let agent = agent_args.build()?;
    let store = SessionStore::open(&cfg.session_dir).map_err(|e| CliError::runtime("io", e))?;
    let state = AppState::new(agent, store, cfg.strokes_per_turn);

    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime("serve", e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(cfg.listen)
            .await
            .map_err(|e| CliError::runtime("serve", format!("binding {}: {e}", cfg.listen)))?;
        let addr = listener.local_addr().map_err(|e| CliError::runtime("serve", e))?;
        println!("listening on http://{addr}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
        serve(listener, state, shutdown_signal())
            .await
            .map_err(|e| CliError::runtime("serve", e))
    })
}

/// Run a parsed command line, printing a short summary on success.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Draw(args) => {
            let m = cmd_draw(&args)?;
            println!("{} strokes -> {}", m.strokes, args.out.display());
        }
        Command::Batch(args) => {
            let m = cmd_batch(&args)?;
            println!("{}/{} sketches -> {}", m.succeeded, m.count, args.out.display());
        }
        Command::Replay(args) => {
            let n = cmd_replay(&args)?;
            println!("{n} frames -> {}", args.out.display());
        }
        Command::Serve(args) => cmd_serve(&args)?,
        Command::Grid(args) => cmd_grid(&args)?,
    }
    Ok(())
}
