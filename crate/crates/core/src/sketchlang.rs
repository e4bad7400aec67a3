//! The string-based sketching language exchanged with the LLM.
//!
//! A reply looks like
//!
//! ```text
//! <thinking>plan...</thinking>
//! <answer>
//! <concept>House</concept>
//! <strokes>
//! <s1>
//! <points>'x13y27', 'x24y27'</points>
//! <t_values>0.00,1.00</t_values>
//! <id>roof line</id>
//! </s1>
//! </strokes>
//! </answer>
//! ```
//!
//! Tags are matched case-insensitively and may carry whitespace inside the
//! angle brackets. Coordinates may be quoted or bare. The `<answer>` wrapper
//! is optional. When several `<strokes>` blocks appear, the last one wins.
//!
//! A stroke list that is cut off right after `</s{j}>` (or inside a complete
//! `<s{j}>` whose closing tag was eaten as an API stop sequence) is the
//! stopping-token protocol; the parser reports `stop_after = j`.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cells per axis.
pub const DEFAULT_RESOLUTION: u32 = 50;

/// A cell reference `x{col}y{row}`, both 1-based, `x1y1` at the bottom left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct GridCoordinate {
    pub col: u32,
    pub row: u32,
}

impl GridCoordinate {
    pub const fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }
}

impl From<[u32; 2]> for GridCoordinate {
    fn from([col, row]: [u32; 2]) -> Self {
        Self { col, row }
    }
}

impl From<GridCoordinate> for [u32; 2] {
    fn from(c: GridCoordinate) -> Self {
        [c.col, c.row]
    }
}

impl fmt::Display for GridCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}y{}", self.col, self.row)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unreadable coordinate {0:?}")]
pub struct CoordinateParseError(pub String);

static COORD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?i)x\s*(\d{1,9})\s*y\s*(\d{1,9})$").unwrap());

impl FromStr for GridCoordinate {
    type Err = CoordinateParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let token = s.trim().trim_matches(|c| c == '\'' || c == '"' || c == '`').trim();
        let caps = COORD_RE
            .captures(token)
            .ok_or_else(|| CoordinateParseError(s.trim().to_string()))?;
        let num = |i: usize| caps[i].parse::<u32>().map_err(|_| CoordinateParseError(s.trim().to_string()));
        Ok(Self::new(num(1)?, num(2)?))
    }
}

/// One stroke: timed sample cells plus a semantic label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSpec {
    pub points: Vec<GridCoordinate>,
    #[serde(rename = "t")]
    pub t_values: Vec<f64>,
    #[serde(default)]
    pub id: String,
}

impl StrokeSpec {
    pub fn new(points: Vec<GridCoordinate>, t_values: Vec<f64>, id: impl Into<String>) -> Self {
        Self {
            points,
            t_values,
            id: id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A concept label and its ordered strokes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SketchSpec {
    pub concept: String,
    pub strokes: Vec<StrokeSpec>,
}

/// Everything extracted from one LLM reply.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentResponse {
    pub thinking: Option<String>,
    pub sketch: SketchSpec,
    /// Set when the reply ended on the stopping token `</s{j}>`.
    pub stop_after: Option<u32>,
    /// The `k` of each `<s{k}>` tag as written, parallel to `sketch.strokes`.
    /// Indices may repeat or skip; stroke order is what counts.
    pub stroke_tags: Vec<u32>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no <strokes> element with at least one stroke was found")]
    NoStrokesBlock,
    #[error("stroke <s{tag}> is malformed: {detail}")]
    MalformedStroke { tag: u32, detail: String },
}

/// One reason a stroke is invalid, worded so it can be echoed back to the
/// model as corrective feedback.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrokeViolation {
    #[error("stroke has no points")]
    NoPoints,
    #[error("length mismatch: {points} points but {t_values} t_values")]
    LengthMismatch { points: usize, t_values: usize },
    #[error("column out of range in {coord} (point {index}); columns run 1 to {resolution}")]
    ColumnOutOfRange {
        index: usize,
        coord: GridCoordinate,
        resolution: u32,
    },
    #[error("row out of range in {coord} (point {index}); rows run 1 to {resolution}")]
    RowOutOfRange {
        index: usize,
        coord: GridCoordinate,
        resolution: u32,
    },
    #[error("t value {value} at position {index} is outside [0, 1]")]
    TOutOfRange { index: usize, value: f64 },
}

/// Check a stroke against the canvas and its own invariants. Returns every
/// violation found rather than stopping at the first.
pub fn validate_stroke(stroke: &StrokeSpec, resolution: u32) -> Result<(), Vec<StrokeViolation>> {
    let mut errs = Vec::new();
    if stroke.points.is_empty() {
        errs.push(StrokeViolation::NoPoints);
    }
    if stroke.points.len() != stroke.t_values.len() {
        errs.push(StrokeViolation::LengthMismatch {
            points: stroke.points.len(),
            t_values: stroke.t_values.len(),
        });
    }
    for (i, &coord) in stroke.points.iter().enumerate() {
        if !(1..=resolution).contains(&coord.col) {
            errs.push(StrokeViolation::ColumnOutOfRange {
                index: i + 1,
                coord,
                resolution,
            });
        }
        if !(1..=resolution).contains(&coord.row) {
            errs.push(StrokeViolation::RowOutOfRange {
                index: i + 1,
                coord,
                resolution,
            });
        }
    }
    for (i, &value) in stroke.t_values.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            errs.push(StrokeViolation::TOutOfRange { index: i + 1, value });
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn tag_pair(name: &str) -> Regex {
    Regex::new(&format!(r"(?is)<\s*{name}\s*>(.*?)<\s*/\s*{name}\s*>")).unwrap()
}

static THINKING_RE: LazyLock<Regex> = LazyLock::new(|| tag_pair("thinking"));
static CONCEPT_RE: LazyLock<Regex> = LazyLock::new(|| tag_pair("concept"));
static POINTS_RE: LazyLock<Regex> = LazyLock::new(|| tag_pair("points"));
static TVALUES_RE: LazyLock<Regex> = LazyLock::new(|| tag_pair("t_values"));
static ID_RE: LazyLock<Regex> = LazyLock::new(|| tag_pair("id"));
static STROKES_OPEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<\s*strokes\s*>").unwrap());
static STROKES_CLOSE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<\s*/\s*strokes\s*>").unwrap());
static STROKE_OPEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<\s*s(\d{1,9})\s*>").unwrap());
static STROKE_CLOSE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<\s*/\s*s(\d{1,9})\s*>").unwrap());
static LIST_SPLIT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[,\s]+").unwrap());

fn list_tokens(content: &str) -> impl Iterator<Item = &str> {
    let inner = content.trim().trim_start_matches('[').trim_end_matches(']');
    LIST_SPLIT_RE.split(inner).filter(|s| !s.is_empty())
}

/// Parser for agent replies, parameterised by grid resolution.
#[derive(Debug, Clone, Copy)]
pub struct ResponseParser {
    pub resolution: u32,
}

impl Default for ResponseParser {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

struct RawStroke<'a> {
    tag: u32,
    body: &'a str,
    closed: bool,
    /// Only whitespace follows this stroke's closing tag up to the end of text.
    trailing_close: bool,
}

impl ResponseParser {
    pub fn new(resolution: u32) -> Self {
        Self { resolution }
    }

    pub fn parse(&self, text: &str) -> Result<AgentResponse, ParseError> {
        let thinking = THINKING_RE
            .captures(text)
            .map(|c| c[1].trim().to_string());

        let open = STROKES_OPEN_RE
            .find_iter(text)
            .last()
            .ok_or(ParseError::NoStrokesBlock)?;
        let rest = &text[open.end()..];
        let (content, terminated) = match STROKES_CLOSE_RE.find(rest) {
            Some(close) => (&rest[..close.start()], true),
            None => (rest, false),
        };

        let concept = CONCEPT_RE
            .captures_iter(&text[..open.start()])
            .last()
            .or_else(|| CONCEPT_RE.captures(rest))
            .map(|c| c[1].trim().to_string())
            .unwrap_or_default();

        let raws = split_strokes(content);
        let mut strokes = Vec::with_capacity(raws.len());
        let mut tags = Vec::with_capacity(raws.len());
        let last = raws.len().saturating_sub(1);
        for (i, raw) in raws.iter().enumerate() {
            match self.parse_stroke(raw) {
                Ok(stroke) => {
                    strokes.push(stroke);
                    tags.push(raw.tag);
                }
                // A reply cut off mid-stroke (token limit) loses only that stroke.
                Err(_) if i == last && !raw.closed && !terminated => {}
                Err(e) => return Err(e),
            }
        }
        if strokes.is_empty() {
            return Err(ParseError::NoStrokesBlock);
        }

        let stop_after = if terminated {
            None
        } else {
            raws.last().and_then(|raw| {
                let kept = tags.len() == raws.len();
                let stopped = (raw.closed && raw.trailing_close) || (!raw.closed && kept);
                (stopped && kept && strokes.len() <= raw.tag as usize).then_some(raw.tag)
            })
        };

        Ok(AgentResponse {
            thinking,
            sketch: SketchSpec { concept, strokes },
            stop_after,
            stroke_tags: tags,
        })
    }

    fn parse_stroke(&self, raw: &RawStroke<'_>) -> Result<StrokeSpec, ParseError> {
        let malformed = |detail: String| ParseError::MalformedStroke { tag: raw.tag, detail };
        let field = |re: &Regex, name: &str| {
            re.captures(raw.body)
                .map(|c| c.get(1).unwrap().as_str())
                .ok_or_else(|| malformed(format!("missing <{name}> element")))
        };

        let points = list_tokens(field(&POINTS_RE, "points")?)
            .map(|tok| tok.parse::<GridCoordinate>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| malformed(e.to_string()))?;
        let t_values = list_tokens(field(&TVALUES_RE, "t_values")?)
            .map(|tok| {
                let tok = tok.trim_matches(|c| c == '\'' || c == '"');
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| !v.is_nan())
                    .ok_or_else(|| malformed(format!("unreadable t value {tok:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let id = field(&ID_RE, "id")?.trim().to_string();
        if id.is_empty() {
            return Err(malformed("empty <id> element".into()));
        }

        let stroke = StrokeSpec { points, t_values, id };
        validate_stroke(&stroke, self.resolution).map_err(|errs| {
            malformed(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        Ok(stroke)
    }
}

fn split_strokes(content: &str) -> Vec<RawStroke<'_>> {
    let opens: Vec<_> = STROKE_OPEN_RE.captures_iter(content).collect();
    let mut out = Vec::with_capacity(opens.len());
    for (i, caps) in opens.iter().enumerate() {
        let whole = caps.get(0).unwrap();
        // The regex bounds the digit count, but the value can still overflow u32.
        let Ok(tag) = caps[1].parse::<u32>() else { continue };
        let end = opens
            .get(i + 1)
            .map_or(content.len(), |next| next.get(0).unwrap().start());
        let segment = &content[whole.end()..end];
        let close = STROKE_CLOSE_RE
            .captures_iter(segment)
            .find(|c| c[1].parse::<u32>().ok() == Some(tag))
            .map(|c| c.get(0).unwrap());
        let (body, closed, trailing_close) = match close {
            Some(m) => (&segment[..m.start()], true, content[whole.end() + m.end()..].trim().is_empty()),
            None => (segment, false, false),
        };
        out.push(RawStroke {
            tag,
            body,
            closed,
            trailing_close,
        });
    }
    out
}

/// Parse a reply with the default 50×50 grid.
pub fn parse_agent_response(text: &str) -> Result<AgentResponse, ParseError> {
    ResponseParser::default().parse(text)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SerializeError {
    #[error("invalid sketch: stroke {index}: {detail}")]
    InvalidSketch { index: usize, detail: String },
}

fn check_text(s: &str) -> Result<(), String> {
    if s.contains(['<', '>']) {
        Err(format!("text {s:?} contains tag characters"))
    } else if s.trim() != s {
        Err(format!("text {s:?} has surrounding whitespace"))
    } else {
        Ok(())
    }
}

fn format_t(t: f64) -> String {
    // Avoid "-0.00".
    let t = if t == 0.0 { 0.0 } else { t };
    format!("{t:.2}")
}

/// Serialize strokes as `<s{k}>` elements numbered from `first_tag`.
pub fn serialize_strokes(strokes: &[StrokeSpec], first_tag: usize) -> Result<String, SerializeError> {
    let mut out = String::new();
    for (i, stroke) in strokes.iter().enumerate() {
        let tag = first_tag + i;
        let invalid = |detail: String| SerializeError::InvalidSketch { index: tag, detail };
        validate_stroke(stroke, u32::MAX).map_err(|errs| {
            invalid(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        if stroke.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        check_text(&stroke.id).map_err(invalid)?;

        let points: Vec<String> = stroke.points.iter().map(|p| format!("'{p}'")).collect();
        let ts: Vec<String> = stroke.t_values.iter().map(|&t| format_t(t)).collect();
        out.push_str(&format!(
            "<s{tag}>\n<points>{}</points>\n<t_values>{}</t_values>\n<id>{}</id>\n</s{tag}>\n",
            points.join(", "),
            ts.join(","),
            stroke.id
        ));
    }
    Ok(out)
}

/// Serialize a whole sketch in the agent's tag format. t values are written
/// with two decimals, so the round trip is exact for t on the 0.01 lattice.
pub fn serialize_sketch(sketch: &SketchSpec) -> Result<String, SerializeError> {
    check_text(&sketch.concept).map_err(|detail| SerializeError::InvalidSketch { index: 0, detail })?;
    let strokes = serialize_strokes(&sketch.strokes, 1)?;
    Ok(format!(
        "<concept>{}</concept>\n<strokes>\n{strokes}</strokes>",
        sketch.concept
    ))
}
