//! The numbered grid canvas.
//!
//! The drawing area is a square of `resolution × cell_size` pixels. Axis
//! numerals live in a strip of `label_margin` pixels along the left and bottom
//! edges, so the full document is `resolution × cell_size + label_margin`
//! pixels on a side (612 at the defaults).
//!
//! Cell `x1y1` is the bottom-left cell. Pixel space follows the image
//! convention: the origin is the top-left corner of the drawing area and `y`
//! grows downward.

use std::fmt::Write as _;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{self, RenderedCanvas};
use crate::sketchlang::GridCoordinate;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("cell x{col}y{row} is outside a {resolution}x{resolution} grid")]
    OutOfRange { col: u32, row: u32, resolution: u32 },
}

/// A point in drawing-area pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Self) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Self, t: f64) -> Self {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for PixelPoint {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<PixelPoint> for [f64; 2] {
    fn from(p: PixelPoint) -> Self {
        [p.x, p.y]
    }
}

impl Add for PixelPoint {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for PixelPoint {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for PixelPoint {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

/// Styling of the grid background. The defaults are a light grey lattice
/// with dark grey numerals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridStyle {
    pub background: String,
    pub line_color: String,
    pub line_width: f64,
    pub label_color: String,
    /// Numeral height as a fraction of `min(cell_size, label_margin)`.
    pub label_scale: f64,
    pub label_stroke_width: f64,
}

impl Default for GridStyle {
    fn default() -> Self {
        Self {
            background: "#ffffff".into(),
            line_color: "#d9d9d9".into(),
            line_width: 0.5,
            label_color: "#404040".into(),
            label_scale: 0.55,
            label_stroke_width: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Cells per axis.
    pub resolution: u32,
    /// Pixels per cell side.
    pub cell_size: f64,
    /// Width of the numeral strip on the left and bottom edges.
    pub label_margin: f64,
    pub style: GridStyle,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::new(50, 12.0)
    }
}

impl GridConfig {
    /// A config whose label strip is one cell wide.
    pub fn new(resolution: u32, cell_size: f64) -> Self {
        Self {
            resolution,
            cell_size,
            label_margin: cell_size,
            style: GridStyle::default(),
        }
    }

    /// Side length of the drawing area in pixels.
    pub fn drawing_size(&self) -> f64 {
        f64::from(self.resolution) * self.cell_size
    }

    /// Side length of the whole document, numeral strip included.
    pub fn canvas_size(&self) -> f64 {
        self.drawing_size() + self.label_margin
    }

    /// Offset of the drawing area's origin inside the document.
    pub fn drawing_origin(&self) -> PixelPoint {
        PixelPoint::new(self.label_margin, 0.0)
    }

    pub fn contains(&self, c: GridCoordinate) -> bool {
        (1..=self.resolution).contains(&c.col) && (1..=self.resolution).contains(&c.row)
    }
}

/// Center of cell `c` in drawing-area pixels.
pub fn grid_to_pixel(c: GridCoordinate, cfg: &GridConfig) -> Result<PixelPoint, GridError> {
    if !cfg.contains(c) {
        return Err(GridError::OutOfRange {
            col: c.col,
            row: c.row,
            resolution: cfg.resolution,
        });
    }
    let res = f64::from(cfg.resolution);
    Ok(PixelPoint::new(
        (f64::from(c.col) - 0.5) * cfg.cell_size,
        (res - f64::from(c.row) + 0.5) * cfg.cell_size,
    ))
}

/// The cell whose half-open pixel interval contains `p`. Points outside the
/// drawing area are clamped to the nearest edge cell.
pub fn pixel_to_grid(p: PixelPoint, cfg: &GridConfig) -> GridCoordinate {
    let res = i64::from(cfg.resolution);
    let cell_index = |v: f64| -> i64 {
        let v = if v.is_finite() { v } else { 0.0 };
        ((v / cfg.cell_size).floor() as i64).clamp(0, res - 1)
    };
    let col = cell_index(p.x) + 1;
    let row = res - cell_index(p.y);
    GridCoordinate::new(col as u32, row as u32)
}

/// Clamp a pixel into the drawing area.
pub fn clamp_to_area(p: PixelPoint, cfg: &GridConfig) -> PixelPoint {
    let side = cfg.drawing_size();
    let fix = |v: f64| if v.is_finite() { v.clamp(0.0, side) } else { 0.0 };
    PixelPoint::new(fix(p.x), fix(p.y))
}

/// The labeled blank grid as a standalone SVG document.
pub fn render_grid_background(cfg: &GridConfig) -> RenderedCanvas {
    render::to_svg(&[], cfg, true)
}

/// Strokes of a numeral glyph in a unit box, `y` pointing down.
fn digit_strokes(d: u8) -> &'static [&'static [(f64, f64)]] {
    const A: (f64, f64) = (0.0, 0.0);
    const B: (f64, f64) = (1.0, 0.0);
    const C: (f64, f64) = (0.0, 0.5);
    const D: (f64, f64) = (1.0, 0.5);
    const E: (f64, f64) = (0.0, 1.0);
    const F: (f64, f64) = (1.0, 1.0);
    match d {
        0 => &[&[A, B, F, E, A]],
        1 => &[&[(0.5, 0.0), (0.5, 1.0)]],
        2 => &[&[A, B, D, C, E, F]],
        3 => &[&[A, B, F, E], &[C, D]],
        4 => &[&[A, C, D], &[B, F]],
        5 => &[&[B, A, C, D, F, E]],
        6 => &[&[B, A, E, F, D, C]],
        7 => &[&[A, B, F]],
        8 => &[&[A, B, F, E, A], &[C, D]],
        _ => &[&[D, C, A, B, F, E]],
    }
}

/// Path data for `n` drawn as vector numerals centered on `center`.
fn numeral_path(n: u32, center: PixelPoint, height: f64) -> String {
    let digits: Vec<u8> = n.to_string().bytes().map(|b| b - b'0').collect();
    let width = height * 0.5;
    let gap = height * 0.25;
    let total = digits.len() as f64 * width + (digits.len() as f64 - 1.0) * gap;
    let left = center.x - total / 2.0;
    let top = center.y - height / 2.0;
    let mut d = String::new();
    for (i, digit) in digits.iter().enumerate() {
        let x0 = left + i as f64 * (width + gap);
        for stroke in digit_strokes(*digit) {
            for (k, (u, v)) in stroke.iter().enumerate() {
                let cmd = if k == 0 { 'M' } else { 'L' };
                let _ = write!(
                    d,
                    "{cmd}{} {}",
                    render::fmt_num(x0 + u * width),
                    render::fmt_num(top + v * height)
                );
            }
        }
    }
    d
}

/// The `<g id="grid">` layer: gridlines over the drawing area plus numerals
/// in the left and bottom strips. Coordinates are document pixels.
pub(crate) fn grid_layer(cfg: &GridConfig) -> String {
    let style = &cfg.style;
    let origin = cfg.drawing_origin();
    let side = cfg.drawing_size();
    let f = render::fmt_num;

    let mut lines = String::new();
    for i in 0..=cfg.resolution {
        let off = f64::from(i) * cfg.cell_size;
        let _ = write!(
            lines,
            "M{} {}V{}M{} {}H{}",
            f(origin.x + off),
            f(origin.y),
            f(origin.y + side),
            f(origin.x),
            f(origin.y + off),
            f(origin.x + side)
        );
    }

    let mut out = String::new();
    out.push_str("<g id=\"grid\">\n");
    let _ = writeln!(
        out,
        "<path class=\"gridlines\" d=\"{lines}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"/>",
        style.line_color,
        f(style.line_width)
    );
    let height = cfg.cell_size.min(cfg.label_margin) * style.label_scale;
    let _ = writeln!(
        out,
        "<g class=\"labels\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\" stroke-linecap=\"round\" stroke-linejoin=\"round\">",
        style.label_color,
        f(style.label_stroke_width)
    );
    let strip_mid = side + cfg.label_margin / 2.0;
    for n in 1..=cfg.resolution {
        let center = PixelPoint::new(
            origin.x + (f64::from(n) - 0.5) * cfg.cell_size,
            origin.y + strip_mid,
        );
        let _ = writeln!(
            out,
            "<path class=\"label-x\" data-n=\"{n}\" d=\"{}\"/>",
            numeral_path(n, center, height)
        );
    }
    for n in 1..=cfg.resolution {
        let center = PixelPoint::new(
            cfg.label_margin / 2.0,
            origin.y + (f64::from(cfg.resolution - n) + 0.5) * cfg.cell_size,
        );
        let _ = writeln!(
            out,
            "<path class=\"label-y\" data-n=\"{n}\" d=\"{}\"/>",
            numeral_path(n, center, height)
        );
    }
    out.push_str("</g>\n</g>\n");
    out
}
