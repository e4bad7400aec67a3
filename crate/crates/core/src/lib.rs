//! Core of `gridsketch`: a sequential sketching toolkit that lets a
//! multimodal LLM draw on a numbered grid canvas.
//!
//! The pipeline is:
//!
//! 1. [`agent`] assembles prompts and talks to an LLM [`agent::Backend`].
//! 2. [`sketchlang`] parses the tagged stroke language out of the reply.
//! 3. [`curvefit`] fits Bézier chains to the timed grid samples of each stroke.
//! 4. [`render`] turns fitted strokes into SVG and rasters the canvas for
//!    visual feedback.
//! 5. [`session`] keeps the evolving state for editing and turn-based
//!    human/agent collaboration, including replayable logs.

pub mod agent;
pub mod curvefit;
pub mod grid;
pub mod render;
pub mod session;
pub mod sketchlang;

pub use curvefit::{ControlPoints, FitReport, FitTolerance, PolyBezier, TimedSample};
pub use grid::{GridConfig, PixelPoint};
pub use render::{RenderedCanvas, StrokeStyle};
pub use sketchlang::{AgentResponse, GridCoordinate, SketchSpec, StrokeSpec};
