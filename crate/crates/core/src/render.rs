//! SVG output, rasterization and stroke-by-stroke replay.
//!
//! Documents are built by hand so the bytes are fully determined by the
//! inputs: numbers use Rust's shortest round-trip formatting and nothing
//! depends on hash order or the clock. Strokes are drawn in drawing-area
//! pixel space inside a single `translate` that skips the numeral strip.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvefit::PolyBezier;
use crate::grid::{self, GridConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("raster backend unavailable: {0}")]
    RasterBackendUnavailable(String),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("svg could not be parsed: {0}")]
    Svg(String),
    #[error("png encoding failed: {0}")]
    Encode(String),
}

/// An sRGB color, written as `#rrggbb`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const BLACK: Rgb = Rgb(0, 0, 0);
    /// User ink in collaborative sessions.
    pub const GREEN: Rgb = Rgb(0x2e, 0xa0, 0x43);
    /// Agent ink in collaborative sessions.
    pub const PINK: Rgb = Rgb(0xe8, 0x4a, 0x9a);
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

impl FromStr for Rgb {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let hex = s.strip_prefix('#').unwrap_or(s);
        if hex.len() != 6 || !hex.is_ascii() {
            return Err(format!("expected #rrggbb, got {s:?}"));
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|e| e.to_string());
        Ok(Rgb(byte(0)?, byte(2)?, byte(4)?))
    }
}

impl TryFrom<String> for Rgb {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Rgb> for String {
    fn from(c: Rgb) -> String {
        c.to_string()
    }
}

/// Stroke color and width. Caps and joins are always round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeStyle {
    pub color: Rgb,
    pub width: f64,
}

impl Default for StrokeStyle {
    fn default() -> Self {
        Self {
            color: Rgb::BLACK,
            width: 3.0,
        }
    }
}

impl StrokeStyle {
    pub fn new(color: Rgb, width: f64) -> Self {
        assert!(width > 0.0, "stroke width must be positive");
        Self { color, width }
    }

    pub fn user() -> Self {
        Self::new(Rgb::GREEN, 3.0)
    }

    pub fn agent() -> Self {
        Self::new(Rgb::PINK, 3.0)
    }
}

/// An SVG document plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedCanvas {
    pub svg: String,
    pub strokes_drawn: usize,
    /// Side length in pixels.
    pub size: f64,
}

pub type StyledStroke<'a> = (&'a PolyBezier, &'a StrokeStyle);

/// Shortest round-trip decimal, without a negative zero.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' | '\r' | '\t' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

/// Path data for one fitted stroke: `C` for cubics, `Q` for quadratics, `L`
/// for lines and a closed zero-length subpath (`M p Z`) for dots.
pub fn path_data(pb: &PolyBezier) -> String {
    let mut d = String::new();
    let mut pen = None;
    for seg in &pb.segments {
        let pts = seg.points();
        let xy = |i: usize| format!("{} {}", fmt_num(pts[i].x), fmt_num(pts[i].y));
        if seg.degree() == 0 {
            let _ = write!(d, "M{}Z", xy(0));
            pen = Some(pts[0]);
            continue;
        }
        if pen != Some(pts[0]) {
            let _ = write!(d, "M{}", xy(0));
        }
        match seg.degree() {
            1 => {
                let _ = write!(d, "L{}", xy(1));
            }
            2 => {
                let _ = write!(d, "Q{} {}", xy(1), xy(2));
            }
            _ => {
                let _ = write!(d, "C{} {} {}", xy(1), xy(2), xy(3));
            }
        }
        pen = Some(seg.last());
    }
    d
}

fn stroke_element(pb: &PolyBezier, style: &StrokeStyle, child: Option<&str>) -> String {
    let open = format!(
        "<path class=\"stroke\" data-id=\"{}\" stroke=\"{}\" stroke-width=\"{}\" d=\"{}\"",
        escape_attr(&pb.source_id),
        style.color,
        fmt_num(style.width),
        path_data(pb)
    );
    match child {
        None => format!("{open}/>\n"),
        Some(child) => format!("{open} visibility=\"hidden\">{child}</path>\n"),
    }
}

fn document(cfg: &GridConfig, with_grid: bool, strokes_body: &str) -> String {
    let side = fmt_num(cfg.canvas_size());
    let origin = cfg.drawing_origin();
    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{side}\" height=\"{side}\" viewBox=\"0 0 {side} {side}\">"
    );
    let _ = writeln!(
        svg,
        "<rect id=\"background\" width=\"{side}\" height=\"{side}\" fill=\"{}\"/>",
        cfg.style.background
    );
    if with_grid {
        svg.push_str(&grid::grid_layer(cfg));
    }
    let _ = writeln!(
        svg,
        "<g id=\"strokes\" transform=\"translate({} {})\" fill=\"none\" stroke-linecap=\"round\" stroke-linejoin=\"round\">",
        fmt_num(origin.x),
        fmt_num(origin.y)
    );
    svg.push_str(strokes_body);
    svg.push_str("</g>\n</svg>\n");
    svg
}

/// Render fitted strokes, one `<path>` each, optionally over the grid.
pub fn to_svg(strokes: &[StyledStroke<'_>], cfg: &GridConfig, with_grid: bool) -> RenderedCanvas {
    let mut body = String::new();
    let mut drawn = 0;
    for (pb, style) in strokes {
        if pb.segments.is_empty() {
            continue;
        }
        body.push_str(&stroke_element(pb, style, None));
        drawn += 1;
    }
    RenderedCanvas {
        svg: document(cfg, with_grid, &body),
        strokes_drawn: drawn,
        size: cfg.canvas_size(),
    }
}

/// Frame `k` holds the first `k` strokes; frame 0 is blank.
pub fn replay_frames(strokes: &[StyledStroke<'_>], cfg: &GridConfig, with_grid: bool) -> Vec<RenderedCanvas> {
    (0..=strokes.len()).map(|k| to_svg(&strokes[..k], cfg, with_grid)).collect()
}

/// One SVG that reveals the strokes in order, `seconds_per_stroke` apart.
pub fn animated_svg(
    strokes: &[StyledStroke<'_>],
    cfg: &GridConfig,
    with_grid: bool,
    seconds_per_stroke: f64,
) -> RenderedCanvas {
    let mut body = String::new();
    let mut drawn = 0;
    for (pb, style) in strokes {
        if pb.segments.is_empty() {
            continue;
        }
        let begin = fmt_num(seconds_per_stroke * (drawn + 1) as f64);
        let set = format!("<set attributeName=\"visibility\" to=\"visible\" begin=\"{begin}s\" fill=\"freeze\"/>");
        body.push_str(&stroke_element(pb, style, Some(&set)));
        drawn += 1;
    }
    RenderedCanvas {
        svg: document(cfg, with_grid, &body),
        strokes_drawn: drawn,
        size: cfg.canvas_size(),
    }
}

/// Turns an SVG document into PNG bytes.
pub trait Rasterizer: Send + Sync {
    fn rasterize(&self, canvas: &RenderedCanvas, scale: f64) -> Result<Vec<u8>, RenderError>;
}

/// The bundled rasterizer, backed by `resvg`.
#[derive(Debug, Default, Clone, Copy)]
pub struct ResvgRasterizer;

impl Rasterizer for ResvgRasterizer {
    fn rasterize(&self, canvas: &RenderedCanvas, scale: f64) -> Result<Vec<u8>, RenderError> {
        use resvg::{tiny_skia, usvg};

        if !(scale > 0.0 && scale.is_finite()) {
            return Err(RenderError::InvalidScale(scale));
        }
        let side = (canvas.size * scale).round().max(1.0) as u32;
        let tree = usvg::Tree::from_str(&canvas.svg, &usvg::Options::default())
            .map_err(|e| RenderError::Svg(e.to_string()))?;
        let mut pixmap = tiny_skia::Pixmap::new(side, side)
            .ok_or_else(|| RenderError::RasterBackendUnavailable(format!("cannot allocate {side}x{side} pixmap")))?;
        let size = tree.size();
        let transform = tiny_skia::Transform::from_scale(side as f32 / size.width(), side as f32 / size.height());
        resvg::render(&tree, transform, &mut pixmap.as_mut());
        pixmap.encode_png().map_err(|e| RenderError::Encode(e.to_string()))
    }
}

/// Rasterize with the bundled backend.
pub fn rasterize(canvas: &RenderedCanvas, scale: f64) -> Result<Vec<u8>, RenderError> {
    ResvgRasterizer.rasterize(canvas, scale)
}
