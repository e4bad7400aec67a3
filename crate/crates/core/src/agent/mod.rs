//! LLM orchestration: prompt assembly, the parse/retry loop, stopping-token
//! continuation for collaborative turns, and chat-based editing.

pub mod backend;
pub mod prompts;

use std::fmt;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use thiserror::Error;

pub use backend::{
    apply_stop_sequences, build_backend, Attachment, Backend, BackendConfig, BackendError, BackendKind,
    Cassette, CassetteBackend, CassetteEntry, ChatRequest, DecodingParams, FixedBackend, Message, Role,
    ScriptedBackend, Transcript, TranscriptError,
};
pub use prompts::{build_prompts, PromptBundle, PromptError, PromptOptions, PromptTemplates};

use crate::curvefit::{fit_stroke, FitError, FitReport, FitTolerance, PolyBezier};
use crate::grid::{render_grid_background, GridConfig};
use crate::render::{RenderError, RenderedCanvas, Rasterizer, ResvgRasterizer};
use crate::sketchlang::{serialize_strokes, ParseError, ResponseParser, SerializeError, SketchSpec, StrokeSpec};

static STROKES_CLOSE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)</\s*strokes\s*>").unwrap());

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no parsable reply after {attempts} attempts; last error: {last}")]
    ExhaustedRetries { attempts: u32, last: ParseError },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("stroke could not be fitted: {0}")]
    Fit(#[from] FitError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

impl AgentError {
    pub fn retryable(&self) -> bool {
        match self {
            AgentError::Backend(e) => e.retryable(),
            AgentError::ExhaustedRetries { .. } => true,
            _ => false,
        }
    }
}

/// The corrective message sent after an unparsable reply.
pub fn corrective_message(error: &ParseError) -> String {
    format!("Your previous response could not be parsed: {error}. Respond again in the exact format.")
}

/// A text-conditioned sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub sketch: SketchSpec,
    pub curves: Vec<PolyBezier>,
    pub reports: Vec<FitReport>,
    pub transcript: Transcript,
    /// Corrective round trips needed before the reply parsed.
    pub retries: u32,
    pub thinking: Option<String>,
}

/// Strokes added by one agent call, plus the messages to append to the
/// session transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTurn {
    /// System prompt to record when the session transcript is still empty.
    pub system: Option<String>,
    pub strokes: Vec<StrokeSpec>,
    pub curves: Vec<PolyBezier>,
    pub reports: Vec<FitReport>,
    pub messages: Vec<Message>,
    pub retries: u32,
    pub thinking: Option<String>,
    /// The agent closed the stroke list without adding anything.
    pub completed: bool,
}

/// What the agent needs to know about an ongoing session.
#[derive(Debug, Clone, Copy)]
pub struct SessionView<'a> {
    pub concept: &'a str,
    pub transcript: &'a Transcript,
    /// Every stroke on the canvas, in drawing order.
    pub strokes: &'a [StrokeSpec],
    /// The canvas as the agent sees it, grid included.
    pub canvas: &'a RenderedCanvas,
}

/// A configured sketching agent. Cheap to clone.
#[derive(Clone)]
pub struct Agent {
    backend: Arc<dyn Backend>,
    rasterizer: Arc<dyn Rasterizer>,
    pub grid: GridConfig,
    pub tolerance: FitTolerance,
    pub prompt_options: PromptOptions,
    pub templates: PromptTemplates,
    pub decoding: DecodingParams,
    pub max_retries: u32,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("backend", &self.backend.name())
            .field("grid", &self.grid)
            .field("tolerance", &self.tolerance)
            .field("prompt_options", &self.prompt_options)
            .field("decoding", &self.decoding)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

struct Exchange<T> {
    value: T,
    messages: Vec<Message>,
    retries: u32,
}

impl Agent {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        let grid = GridConfig::default();
        Self {
            backend,
            rasterizer: Arc::new(ResvgRasterizer),
            tolerance: FitTolerance::for_grid(&grid),
            grid,
            prompt_options: PromptOptions::default(),
            templates: PromptTemplates::bundled(),
            decoding: DecodingParams::default(),
            max_retries: 3,
        }
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let mut agent = Self::new(build_backend(cfg)?);
        agent.decoding = cfg.decoding();
        agent.max_retries = cfg.max_retries;
        Ok(agent)
    }

    /// Also resets the fit tolerance to the grid's default.
    pub fn with_grid(mut self, grid: GridConfig) -> Self {
        self.tolerance = FitTolerance::for_grid(&grid);
        self.grid = grid;
        self
    }

    pub fn with_rasterizer(mut self, rasterizer: Arc<dyn Rasterizer>) -> Self {
        self.rasterizer = rasterizer;
        self
    }

    pub fn with_prompt_options(mut self, options: PromptOptions) -> Self {
        self.prompt_options = options;
        self
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    pub fn with_decoding(mut self, params: DecodingParams) -> Self {
        self.decoding = params;
        self
    }

    pub fn backend(&self) -> &dyn Backend {
        &*self.backend
    }

    pub fn prompts(&self, concept: &str) -> Result<PromptBundle, PromptError> {
        build_prompts(concept, &self.grid, &self.prompt_options, &self.templates)
    }

    fn parser(&self) -> ResponseParser {
        ResponseParser::new(self.grid.resolution)
    }

    fn png(&self, canvas: &RenderedCanvas) -> Result<Attachment, RenderError> {
        Ok(Attachment::png(self.rasterizer.rasterize(canvas, 1.0)?))
    }

    fn fit_all(&self, strokes: &[StrokeSpec]) -> Result<(Vec<PolyBezier>, Vec<FitReport>), FitError> {
        strokes
            .iter()
            .map(|s| fit_stroke(s, &self.grid, &self.tolerance))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.into_iter().unzip())
    }

    /// Send `first`, then keep asking until `parse` accepts a reply or the
    /// retry budget runs out. A prefill is re-sent before every attempt and
    /// is part of the text handed to `parse`.
    fn converse<T>(
        &self,
        system: Option<&str>,
        history: &[Message],
        first: Message,
        prefill: Option<&str>,
        stops: Vec<String>,
        mut parse: impl FnMut(&str, &str) -> Result<T, ParseError>,
    ) -> Result<Exchange<T>, AgentError> {
        let mut check = Transcript {
            system: None,
            messages: history.to_vec(),
        };
        check.push(first.clone())?;

        let params = DecodingParams {
            stop_sequences: stops,
            ..self.decoding.clone()
        };
        let mut added = vec![first];
        let mut attempt = 0;
        loop {
            let mut messages: Vec<Message> = history.iter().chain(&added).cloned().collect();
            if let Some(p) = prefill {
                messages.push(Message::assistant(p));
            }
            let request = ChatRequest {
                system: system.map(str::to_string),
                messages,
                params: params.clone(),
            };
            let reply = self.backend.send(&request)?;
            let full = format!("{}{reply}", prefill.unwrap_or(""));
            let parsed = parse(&full, &reply);
            added.push(Message::assistant(full));
            match parsed {
                Ok(value) => {
                    return Ok(Exchange {
                        value,
                        messages: added,
                        retries: attempt,
                    })
                }
                Err(e) if attempt >= self.max_retries => {
                    return Err(AgentError::ExhaustedRetries {
                        attempts: attempt + 1,
                        last: e,
                    })
                }
                Err(e) => {
                    log::debug!("reply {attempt} unparsable: {e}");
                    added.push(Message::user(corrective_message(&e)));
                    attempt += 1;
                }
            }
        }
    }

    /// Draw `concept` from scratch on the blank grid.
    pub fn generate_sketch(&self, concept: &str) -> Result<Generation, AgentError> {
        let bundle = self.prompts(concept)?;
        let blank = self.png(&render_grid_background(&self.grid))?;
        let parser = self.parser();
        let ex = self.converse(
            bundle.system.as_deref(),
            &[],
            Message::user_with_image(bundle.user, blank),
            None,
            Vec::new(),
            |full, _| parser.parse(full),
        )?;
        let response = ex.value;
        let (curves, reports) = self.fit_all(&response.sketch.strokes)?;
        Ok(Generation {
            sketch: response.sketch,
            curves,
            reports,
            transcript: Transcript {
                system: bundle.system,
                messages: ex.messages,
            },
            retries: ex.retries,
            thinking: response.thinking,
        })
    }

    /// Ask the agent for at most `j` strokes continuing the shared sequence.
    ///
    /// The stroke chain so far goes into an assistant prefill, so the reply
    /// picks up at `<s{n+1}>`; the request stops at `</s{n+j}>`.
    pub fn continue_collab(&self, view: SessionView<'_>, j: usize) -> Result<AgentTurn, AgentError> {
        let j = j.max(1);
        let n = view.strokes.len();
        let bundle = self.prompts(view.concept)?;
        let instruction = prompts::continuation_prompt(view.concept.trim(), n + 1, n + j, &self.templates)?;
        let text = if view.transcript.is_empty() {
            format!("{}\n\n{instruction}", bundle.user)
        } else {
            instruction
        };
        let first = Message::user_with_image(text, self.png(view.canvas)?);
        let prefill = format!(
            "<answer>\n<concept>{}</concept>\n<strokes>\n{}",
            view.concept.trim(),
            serialize_strokes(view.strokes, 1)?
        );
        let system = view.transcript.system.clone().or(bundle.system);
        let parser = self.parser();
        let ex = self.converse(
            system.as_deref(),
            &view.transcript.messages,
            first,
            Some(&prefill),
            vec![format!("</s{}>", n + j)],
            |full, reply| {
                let closed = STROKES_CLOSE_RE.is_match(reply);
                match parser.parse(full) {
                    Ok(r) => {
                        let new: Vec<StrokeSpec> = r
                            .sketch
                            .strokes
                            .into_iter()
                            .zip(r.stroke_tags)
                            .filter(|(_, tag)| *tag as usize > n)
                            .map(|(s, _)| s)
                            .take(j)
                            .collect();
                        if new.is_empty() && !closed {
                            Err(ParseError::NoStrokesBlock)
                        } else {
                            Ok((new, r.thinking))
                        }
                    }
                    Err(ParseError::NoStrokesBlock) if closed => Ok((Vec::new(), None)),
                    Err(e) => Err(e),
                }
            },
        )?;
        let (strokes, thinking) = ex.value;
        let (curves, reports) = self.fit_all(&strokes)?;
        Ok(AgentTurn {
            system,
            completed: strokes.is_empty(),
            strokes,
            curves,
            reports,
            messages: ex.messages,
            retries: ex.retries,
            thinking,
        })
    }

    /// Apply an editing instruction. Every stroke in the reply is an
    /// addition; existing strokes are never touched.
    pub fn edit_sketch(&self, view: SessionView<'_>, instruction: &str) -> Result<AgentTurn, AgentError> {
        let mut text = prompts::editing_prompt(instruction, &self.templates);
        let bundle = self.prompts(view.concept)?;
        if view.transcript.is_empty() {
            // Nothing said yet: give the agent the task and the current strokes.
            text = format!(
                "{}\n\nThe canvas already holds this sketch:\n<concept>{}</concept>\n<strokes>\n{}</strokes>\n\n{text}",
                bundle.user,
                view.concept.trim(),
                serialize_strokes(view.strokes, 1)?
            );
        }
        let first = Message::user_with_image(text, self.png(view.canvas)?);
        let system = view.transcript.system.clone().or(bundle.system);
        let parser = self.parser();
        let ex = self.converse(
            system.as_deref(),
            &view.transcript.messages,
            first,
            None,
            Vec::new(),
            |full, _| parser.parse(full),
        )?;
        let response = ex.value;
        let (curves, reports) = self.fit_all(&response.sketch.strokes)?;
        Ok(AgentTurn {
            system,
            strokes: response.sketch.strokes,
            curves,
            reports,
            messages: ex.messages,
            retries: ex.retries,
            thinking: response.thinking,
            completed: false,
        })
    }
}
