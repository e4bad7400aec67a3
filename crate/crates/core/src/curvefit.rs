//! Bézier fitting for timed stroke samples.
//!
//! Each stroke arrives as grid cells with a `t` value per cell: the curve
//! parameter at which the stroke should pass through that cell. The control
//! points come out of an ordinary linear least-squares problem
//! `min ‖A·P − B‖`, where row `j` of `A` holds the Bernstein basis at `t_j`
//! and row `j` of `B` is the sample position. Nothing is pinned; all control
//! points are free.
//!
//! On top of that single-segment solve, [`fit_stroke`]:
//!
//! * cuts the stroke at repeated consecutive cells (the hard-corner idiom),
//! * splits any piece whose max residual exceeds [`FitTolerance::max_px`] at
//!   its median sample, renormalising `t` per half, down to
//!   [`FitTolerance::max_depth`],
//! * lowers the degree when there are too few distinct `t` values for a cubic,
//! * and snaps shared endpoints so the chain is C0.

use arrayvec::ArrayVec;
use nalgebra::{DMatrix, Dyn, OMatrix, U2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, clamp_to_area, GridConfig, PixelPoint};
use crate::sketchlang::{validate_stroke, GridCoordinate, StrokeSpec};

/// Largest supported Bézier degree.
pub const MAX_DEGREE: usize = 3;

/// Points kept when a human stroke is converted to the agent's language.
pub const MAX_USER_POINTS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("cannot fit an empty sample list")]
    EmptyStroke,
    #[error("design matrix is rank deficient ({rows} samples, degree {degree})")]
    RankDeficient { rows: usize, degree: usize },
    #[error("a Bézier segment needs 1 to 4 control points, got {0}")]
    BadControlPoints(usize),
    #[error("invalid stroke: {0}")]
    InvalidStroke(String),
}

/// Control points `P0..=Pd` of one Bézier segment of degree `d ≤ 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PixelPoint>", into = "Vec<PixelPoint>")]
pub struct ControlPoints {
    pts: ArrayVec<PixelPoint, 4>,
}

impl ControlPoints {
    pub fn new(pts: &[PixelPoint]) -> Result<Self, FitError> {
        if pts.is_empty() || pts.len() > MAX_DEGREE + 1 {
            return Err(FitError::BadControlPoints(pts.len()));
        }
        Ok(Self {
            pts: pts.iter().copied().collect(),
        })
    }

    pub fn point(p: PixelPoint) -> Self {
        Self {
            pts: std::iter::once(p).collect(),
        }
    }

    pub fn line(a: PixelPoint, b: PixelPoint) -> Self {
        Self {
            pts: [a, b].into_iter().collect(),
        }
    }

    pub fn cubic(p0: PixelPoint, p1: PixelPoint, p2: PixelPoint, p3: PixelPoint) -> Self {
        Self {
            pts: ArrayVec::from([p0, p1, p2, p3]),
        }
    }

    pub fn degree(&self) -> usize {
        self.pts.len() - 1
    }

    pub fn points(&self) -> &[PixelPoint] {
        &self.pts
    }

    pub fn first(&self) -> PixelPoint {
        self.pts[0]
    }

    pub fn last(&self) -> PixelPoint {
        self.pts[self.pts.len() - 1]
    }

    /// A lone point has one control point for both ends; give it two so
    /// each end can be moved on its own.
    fn split_ends(&mut self) {
        if self.pts.len() == 1 {
            let p = self.pts[0];
            self.pts.push(p);
        }
    }

    fn set_first(&mut self, p: PixelPoint) {
        self.split_ends();
        self.pts[0] = p;
    }

    fn set_last(&mut self, p: PixelPoint) {
        self.split_ends();
        let n = self.pts.len();
        self.pts[n - 1] = p;
    }

    pub fn translate(&self, v: PixelPoint) -> Self {
        Self {
            pts: self.pts.iter().map(|&p| p + v).collect(),
        }
    }

    /// Split at `t` with de Casteljau's construction.
    pub fn split(&self, t: f64) -> (Self, Self) {
        let mut work: ArrayVec<PixelPoint, 4> = self.pts.clone();
        let n = work.len();
        let mut left = ArrayVec::<PixelPoint, 4>::new();
        let mut right = ArrayVec::<PixelPoint, 4>::new();
        left.push(work[0]);
        right.push(work[n - 1]);
        for level in 1..n {
            for i in 0..n - level {
                work[i] = work[i].lerp(work[i + 1], t);
            }
            left.push(work[0]);
            right.push(work[n - level - 1]);
        }
        right.reverse();
        (Self { pts: left }, Self { pts: right })
    }

    /// The part of the curve between parameters `a ≤ b`, reparametrised to
    /// `[0, 1]`.
    pub fn subsegment(&self, a: f64, b: f64) -> Self {
        if b - a <= 1e-15 || a >= 1.0 - 1e-15 {
            return Self::point(eval_bezier(self, a));
        }
        let (_, tail) = self.split(a);
        let (mid, _) = tail.split((b - a) / (1.0 - a));
        mid
    }
}

impl TryFrom<Vec<PixelPoint>> for ControlPoints {
    type Error = FitError;
    fn try_from(v: Vec<PixelPoint>) -> Result<Self, FitError> {
        Self::new(&v)
    }
}

impl From<ControlPoints> for Vec<PixelPoint> {
    fn from(cp: ControlPoints) -> Self {
        cp.pts.to_vec()
    }
}

/// A sample position and the curve parameter it should be reached at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedSample {
    pub point: PixelPoint,
    pub t: f64,
}

impl TimedSample {
    pub const fn new(point: PixelPoint, t: f64) -> Self {
        Self { point, t }
    }
}

/// A fitted stroke: C0-continuous chain of Bézier segments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolyBezier {
    pub segments: Vec<ControlPoints>,
    #[serde(default)]
    pub source_id: String,
}

impl PolyBezier {
    pub fn start(&self) -> Option<PixelPoint> {
        self.segments.first().map(ControlPoints::first)
    }

    pub fn end(&self) -> Option<PixelPoint> {
        self.segments.last().map(ControlPoints::last)
    }
}

/// One recursive split: max residual of the parent fit and of the two halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub depth: u32,
    pub parent_max: f64,
    pub left_max: f64,
    pub right_max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub max_residual: f64,
    pub rms_residual: f64,
    pub splits: usize,
    pub degree_used: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub split_log: Vec<SplitRecord>,
}

/// When to split a piece and how deep to go.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitTolerance {
    pub max_px: f64,
    pub max_depth: u32,
}

impl Default for FitTolerance {
    fn default() -> Self {
        Self::for_grid(&GridConfig::default())
    }
}

impl FitTolerance {
    /// Two cells of error, five levels of splitting.
    pub fn for_grid(cfg: &GridConfig) -> Self {
        Self {
            max_px: 2.0 * cfg.cell_size,
            max_depth: 5,
        }
    }

    /// Finer tolerance for freehand pointer input.
    pub fn for_user_ink(cfg: &GridConfig) -> Self {
        Self {
            max_px: cfg.cell_size / 2.0,
            max_depth: 6,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    match (n, k) {
        (_, 0) => 1.0,
        (n, k) if k == n => 1.0,
        (2, 1) => 2.0,
        (3, 1) | (3, 2) => 3.0,
        _ => unreachable!("degree above {MAX_DEGREE}"),
    }
}

/// Bernstein basis `C(d,i)·(1−t)^(d−i)·t^i`.
pub fn bernstein(degree: usize, i: usize, t: f64) -> f64 {
    binomial(degree, i) * (1.0 - t).powi((degree - i) as i32) * t.powi(i as i32)
}

/// Evaluate the curve at `t` in Bernstein form.
pub fn eval_bezier(cp: &ControlPoints, t: f64) -> PixelPoint {
    let d = cp.degree();
    cp.pts
        .iter()
        .enumerate()
        .fold(PixelPoint::default(), |acc, (i, &p)| acc + p * bernstein(d, i, t))
}

fn residuals<'a>(cp: &'a ControlPoints, samples: &'a [TimedSample]) -> impl Iterator<Item = f64> + 'a {
    samples.iter().map(move |s| s.point.distance(eval_bezier(cp, s.t)))
}

fn max_residual(cp: &ControlPoints, samples: &[TimedSample]) -> f64 {
    residuals(cp, samples).fold(0.0, f64::max)
}

fn report_for(cp: &ControlPoints, samples: &[TimedSample]) -> FitReport {
    let (max, sq) = residuals(cp, samples).fold((0.0f64, 0.0), |(m, s), r| (m.max(r), s + r * r));
    FitReport {
        max_residual: max,
        rms_residual: (sq / samples.len().max(1) as f64).sqrt(),
        splits: 0,
        degree_used: vec![cp.degree() as u8],
        split_log: Vec::new(),
    }
}

/// Number of distinct `t` values, treating values closer than `1e-12` as equal.
fn distinct_t(samples: &[TimedSample]) -> usize {
    let mut ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    ts.len()
}

/// Least-squares fit at a fixed degree. Fails if the Bernstein design matrix
/// is numerically rank deficient.
pub fn fit_bezier_degree(samples: &[TimedSample], degree: usize) -> Result<ControlPoints, FitError> {
    if samples.is_empty() {
        return Err(FitError::EmptyStroke);
    }
    if degree > MAX_DEGREE {
        return Err(FitError::BadControlPoints(degree + 1));
    }
    let m = samples.len();
    let n = degree + 1;
    let a = DMatrix::from_fn(m, n, |j, i| bernstein(degree, i, samples[j].t));
    let b = OMatrix::<f64, Dyn, U2>::from_fn(m, |j, k| if k == 0 { samples[j].point.x } else { samples[j].point.y });

    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > s_max * 1e-10).count();
    if m < n || rank < n || s_max == 0.0 {
        return Err(FitError::RankDeficient { rows: m, degree });
    }
    let sol = svd
        .solve(&b, s_max * 1e-14)
        .map_err(|_| FitError::RankDeficient { rows: m, degree })?;
    let pts: Vec<PixelPoint> = (0..n).map(|i| PixelPoint::new(sol[(i, 0)], sol[(i, 1)])).collect();
    ControlPoints::new(&pts)
}

/// Fit one segment, picking the degree from the data: `min(3, m − 1)`, and
/// lower still while the distinct `t` values cannot support it. All `t`
/// equal collapses to the centroid.
pub fn fit_bezier(samples: &[TimedSample]) -> Result<(ControlPoints, FitReport), FitError> {
    if samples.is_empty() {
        return Err(FitError::EmptyStroke);
    }
    let mut degree = MAX_DEGREE.min(distinct_t(samples) - 1);
    loop {
        match fit_bezier_degree(samples, degree) {
            Ok(cp) => {
                let report = report_for(&cp, samples);
                return Ok((cp, report));
            }
            Err(FitError::RankDeficient { .. }) if degree > 0 => degree -= 1,
            Err(e) => return Err(e),
        }
    }
}

/// Map `t` affinely so the piece spans `[0, 1]`. Constant `t` is left alone.
fn renormalize(samples: &[TimedSample]) -> Vec<TimedSample> {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.t), hi.max(s.t)));
    let span = hi - lo;
    samples
        .iter()
        .map(|s| TimedSample::new(s.point, if span > 0.0 { (s.t - lo) / span } else { s.t }))
        .collect()
}

/// A finished segment and the (normalised) samples it was fitted to.
struct Piece {
    cp: ControlPoints,
    samples: Vec<TimedSample>,
}

struct Splitter<'a> {
    tol: &'a FitTolerance,
    pieces: Vec<Piece>,
    /// Indices into `pieces` where a recursive split left a junction.
    log: Vec<SplitRecord>,
}

impl Splitter<'_> {
    /// Fit `samples` (already normalised), splitting while the error is too
    /// large. `parent` is the enclosing fit restricted to this piece, used as
    /// a fallback so a half never does worse than its parent did on it.
    /// Returns the max residual of this piece's own fit.
    fn fit(&mut self, samples: Vec<TimedSample>, depth: u32, parent: Option<ControlPoints>) -> Result<f64, FitError> {
        let (mut cp, report) = fit_bezier(&samples)?;
        let mut max = report.max_residual;
        if let Some(restricted) = parent {
            let alt = max_residual(&restricted, &samples);
            if alt < max {
                cp = restricted;
                max = alt;
            }
        }

        if max <= self.tol.max_px || depth >= self.tol.max_depth || samples.len() < 4 {
            self.pieces.push(Piece { cp, samples });
            return Ok(max);
        }

        let mid = samples.len() / 2;
        let halves = [samples[..=mid].to_vec(), samples[mid..].to_vec()];
        let mut maxes = [0.0; 2];
        for (k, half) in halves.into_iter().enumerate() {
            let (lo, hi) = half
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.t), hi.max(s.t)));
            let restricted = cp.subsegment(lo, hi);
            maxes[k] = self.fit(renormalize(&half), depth + 1, Some(restricted))?;
        }
        self.log.push(SplitRecord {
            depth,
            parent_max: max,
            left_max: maxes[0],
            right_max: maxes[1],
        });
        Ok(max)
    }
}

/// Fit timed samples as a chain, splitting recursively per `tol`. The
/// samples' `t` are renormalised to `[0, 1]` first.
fn fit_chain(samples: &[TimedSample], tol: &FitTolerance) -> Result<(Vec<Piece>, Vec<SplitRecord>), FitError> {
    let mut splitter = Splitter {
        tol,
        pieces: Vec::new(),
        log: Vec::new(),
    };
    splitter.fit(renormalize(samples), 0, None)?;
    let mut pieces = splitter.pieces;
    for k in 1..pieces.len() {
        let mean = pieces[k - 1].cp.last().lerp(pieces[k].cp.first(), 0.5);
        pieces[k - 1].cp.set_last(mean);
        pieces[k].cp.set_first(mean);
    }
    Ok((pieces, splitter.log))
}

fn finish(pieces: Vec<Piece>, log: Vec<SplitRecord>, source_id: &str) -> (PolyBezier, FitReport) {
    let mut max = 0.0f64;
    let mut sq = 0.0;
    let mut count = 0usize;
    for piece in &pieces {
        for r in residuals(&piece.cp, &piece.samples) {
            max = max.max(r);
            sq += r * r;
            count += 1;
        }
    }
    let report = FitReport {
        max_residual: max,
        rms_residual: (sq / count.max(1) as f64).sqrt(),
        splits: log.len(),
        degree_used: pieces.iter().map(|p| p.cp.degree() as u8).collect(),
        split_log: log,
    };
    let pb = PolyBezier {
        segments: pieces.into_iter().map(|p| p.cp).collect(),
        source_id: source_id.to_string(),
    };
    (pb, report)
}

/// Cut a stroke's index range at every repeated consecutive cell. Each
/// corner cell ends one piece and starts the next.
fn corner_pieces(points: &[GridCoordinate]) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..points.len() {
        if points[i] == points[i - 1] {
            ranges.push(start..i);
            start = i;
        }
    }
    ranges.push(start..points.len());
    if ranges.iter().any(|r| r.len() >= 2) {
        ranges.retain(|r| r.len() >= 2);
    } else {
        ranges.truncate(1);
    }
    ranges
}

/// Fit an agent stroke on the grid.
pub fn fit_stroke(stroke: &StrokeSpec, cfg: &GridConfig, tol: &FitTolerance) -> Result<(PolyBezier, FitReport), FitError> {
    if stroke.points.is_empty() {
        return Err(FitError::EmptyStroke);
    }
    validate_stroke(stroke, cfg.resolution).map_err(|errs| {
        FitError::InvalidStroke(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
    })?;
    let samples: Vec<TimedSample> = stroke
        .points
        .iter()
        .zip(&stroke.t_values)
        .map(|(&c, &t)| {
            let p = grid::grid_to_pixel(c, cfg).expect("validated above");
            TimedSample::new(p, t)
        })
        .collect();

    let mut pieces: Vec<Piece> = Vec::new();
    let mut log = Vec::new();
    for range in corner_pieces(&stroke.points) {
        let corner = samples[range.start].point;
        let (mut chain, chain_log) = fit_chain(&samples[range], tol)?;
        if let Some(prev) = pieces.last_mut() {
            // Hard corner: both sides meet exactly at the repeated cell.
            prev.cp.set_last(corner);
            chain[0].cp.set_first(corner);
        }
        pieces.extend(chain);
        log.extend(chain_log);
    }

    // A stroke that starts and ends on the same cell is meant to be closed.
    let closed = stroke.points.len() >= 3 && stroke.points.first() == stroke.points.last();
    if closed {
        let n = pieces.len();
        let mean = pieces[0].cp.first().lerp(pieces[n - 1].cp.last(), 0.5);
        pieces[0].cp.set_first(mean);
        pieces[n - 1].cp.set_last(mean);
    }

    Ok(finish(pieces, log, &stroke.id))
}

/// Uniform samples per segment, with global `t` spread over `[0, 1]` by
/// segment index. Junction duplicates are dropped.
pub fn sample_polybezier(pb: &PolyBezier, k: usize) -> Vec<TimedSample> {
    let k = k.max(2);
    let n = pb.segments.len();
    let mut out: Vec<TimedSample> = Vec::with_capacity(n * k);
    for (i, seg) in pb.segments.iter().enumerate() {
        for l in 0..k {
            let local = l as f64 / (k - 1) as f64;
            let global = (i as f64 + local) / n as f64;
            if out.last().is_some_and(|prev| prev.t == global) {
                continue;
            }
            out.push(TimedSample::new(eval_bezier(seg, local), global));
        }
    }
    out
}

fn round2(t: f64) -> f64 {
    (t * 100.0).round() / 100.0
}

/// Convert freehand pointer input into the agent's language.
pub fn invert_user_stroke(polyline: &[PixelPoint], cfg: &GridConfig) -> StrokeSpec {
    invert_user_stroke_with_curve(polyline, cfg, &FitTolerance::for_user_ink(cfg)).0
}

/// Like [`invert_user_stroke`], also returning the curve fitted to the raw
/// input (what gets drawn for the user).
pub fn invert_user_stroke_with_curve(
    polyline: &[PixelPoint],
    cfg: &GridConfig,
    tol: &FitTolerance,
) -> (StrokeSpec, PolyBezier) {
    let mut pts: Vec<PixelPoint> = polyline.iter().map(|&p| clamp_to_area(p, cfg)).collect();
    pts.dedup();
    if pts.is_empty() {
        pts.push(clamp_to_area(PixelPoint::default(), cfg));
    }

    let dot = |p: PixelPoint| {
        let cell = grid::pixel_to_grid(p, cfg);
        (
            StrokeSpec::new(vec![cell], vec![0.0], ""),
            PolyBezier {
                segments: vec![ControlPoints::point(p)],
                source_id: String::new(),
            },
        )
    };
    if pts.len() == 1 {
        return dot(pts[0]);
    }

    let cumulative = arc_lengths(&pts);
    let total = *cumulative.last().unwrap();
    let samples: Vec<TimedSample> = pts
        .iter()
        .zip(&cumulative)
        .map(|(&p, &s)| TimedSample::new(p, s / total))
        .collect();
    let curve = match fit_chain(&samples, tol) {
        Ok((pieces, _)) => PolyBezier {
            segments: pieces.into_iter().map(|p| p.cp).collect(),
            source_id: String::new(),
        },
        Err(_) => return dot(pts[0]),
    };

    // Walk the fitted ink densely. Each run of samples inside one cell is
    // represented by the sample closest to that cell's center, and keeps its
    // arc-length position along the ink.
    let dense: Vec<PixelPoint> = sample_polybezier(&curve, 32).into_iter().map(|s| s.point).collect();
    let along = arc_lengths(&dense);
    let mut runs: Vec<Run> = Vec::new();
    for (k, (&p, &s)) in dense.iter().zip(&along).enumerate() {
        let cell = grid::pixel_to_grid(p, cfg);
        let d = p.distance(grid::grid_to_pixel(cell, cfg).expect("cell from pixel_to_grid"));
        match runs.last_mut() {
            Some(r) if r.cell == cell => {
                if d < r.off_center {
                    r.at = s;
                    r.idx = k;
                    r.point = p;
                    r.off_center = d;
                }
            }
            _ => runs.push(Run {
                cell,
                at: s,
                idx: k,
                point: p,
                off_center: d,
            }),
        }
    }
    if runs.len() == 1 {
        return (StrokeSpec::new(vec![runs[0].cell], vec![0.0], ""), curve);
    }
    if runs.len() <= MAX_USER_POINTS {
        let all: Vec<usize> = (0..runs.len()).collect();
        return (spec_from_runs(&runs, &all), curve);
    }

    // Thin, then trade kept runs for the run under the worst deviation of
    // the refitted spec while that keeps improving it.
    let mut keep = thin_by_deviation(&runs, &dense, &along, MAX_USER_POINTS);
    let mut best = refit_deviation(&spec_from_runs(&runs, &keep), &dense, cfg, tol);
    for _ in 0..REFINE_ROUNDS {
        let Some((dev, worst)) = best else { break };
        if dev <= cfg.cell_size / 2.0 {
            break;
        }
        let add = nearest_run(&runs, along[worst]);
        if keep.contains(&add) {
            break;
        }
        let mut grown = keep.clone();
        let at = grown.partition_point(|&k| k < add);
        grown.insert(at, add);
        // Candidates to drop: interior runs whose neighbours sit closest
        // together first.
        let gap = |i: usize| runs[grown[i + 1]].at - runs[grown[i - 1]].at;
        let mut drops: Vec<usize> = (1..grown.len() - 1).filter(|&i| grown[i] != add).collect();
        drops.sort_by(|&i, &j| gap(i).total_cmp(&gap(j)));
        let improved = drops.into_iter().take(DROP_CANDIDATES).find_map(|i| {
            let mut trial = grown.clone();
            trial.remove(i);
            match refit_deviation(&spec_from_runs(&runs, &trial), &dense, cfg, tol) {
                Some((d, w)) if d < dev => Some((trial, (d, w))),
                _ => None,
            }
        });
        match improved {
            Some((trial, score)) => {
                keep = trial;
                best = Some(score);
            }
            None => break,
        }
    }
    (spec_from_runs(&runs, &keep), curve)
}

const REFINE_ROUNDS: usize = 24;
const DROP_CANDIDATES: usize = 4;
const DEVIATION_SAMPLES: usize = 400;

fn spec_from_runs(runs: &[Run], keep: &[usize]) -> StrokeSpec {
    let mut picked: Vec<Run> = keep.iter().map(|&i| runs[i]).collect();
    picked.dedup_by(|b, a| a.cell == b.cell);
    if picked.len() == 1 {
        return StrokeSpec::new(vec![picked[0].cell], vec![0.0], "");
    }
    let (s0, s1) = (picked[0].at, picked[picked.len() - 1].at);
    let span = (s1 - s0).max(f64::MIN_POSITIVE);
    let t_values = picked.iter().map(|r| round2((r.at - s0) / span)).collect();
    StrokeSpec::new(picked.iter().map(|r| r.cell).collect(), t_values, "")
}

fn nearest_run(runs: &[Run], at: f64) -> usize {
    (0..runs.len())
        .min_by(|&i, &j| (runs[i].at - at).abs().total_cmp(&(runs[j].at - at).abs()))
        .expect("runs are never empty")
}

/// Worst symmetric distance between the ink and the refit of `spec`, with
/// the index of the ink sample it is attributed to.
fn refit_deviation(spec: &StrokeSpec, ink: &[PixelPoint], cfg: &GridConfig, tol: &FitTolerance) -> Option<(f64, usize)> {
    let (pb, _) = fit_stroke(spec, cfg, tol).ok()?;
    let redrawn: Vec<PixelPoint> = sample_polybezier(&pb, 32).into_iter().map(|s| s.point).collect();
    let nearest = |p: PixelPoint, set: &[PixelPoint]| {
        set.iter()
            .enumerate()
            .map(|(i, q)| (p.distance(*q), i))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("non-empty sampling")
    };
    // Every `step`-th ink sample is plenty to locate the worst spot.
    let step = ink.len().div_ceil(DEVIATION_SAMPLES).max(1);
    let coarse: Vec<PixelPoint> = ink.iter().step_by(step).copied().collect();
    let mut worst = (0.0, 0);
    for (k, &p) in coarse.iter().enumerate() {
        let (d, _) = nearest(p, &redrawn);
        if d > worst.0 {
            worst = (d, k * step);
        }
    }
    for &q in &redrawn {
        let (d, k) = nearest(q, &coarse);
        if d > worst.0 {
            worst = (d, k * step);
        }
    }
    Some(worst)
}

const TIP_PICKS: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Run {
    cell: GridCoordinate,
    /// Arc-length position of the representative sample.
    at: f64,
    /// Index of the representative in the dense sampling.
    idx: usize,
    point: PixelPoint,
    off_center: f64,
}

/// Keep at most `budget` runs. Starting from the two ends, a few picks go to
/// the runs nearest the ink that strays furthest from the polyline kept so
/// far (tips and sharp bends); the rest split the longest arc-length gaps.
fn thin_by_deviation(runs: &[Run], dense: &[PixelPoint], along: &[f64], budget: usize) -> Vec<usize> {
    let mut keep = vec![0, runs.len() - 1];
    while keep.len() < TIP_PICKS.min(budget) {
        let mut best: Option<(f64, usize)> = None;
        for w in keep.windows(2) {
            let (a, b) = (runs[w[0]], runs[w[1]]);
            if w[1] - w[0] < 2 {
                continue;
            }
            for (p, &s) in dense.iter().zip(along) {
                if s <= a.at || s >= b.at {
                    continue;
                }
                let d = point_segment_distance(*p, a.point, b.point);
                if best.is_none_or(|(bd, _)| d > bd) {
                    // Run whose representative lies nearest this sample along the ink.
                    let i = (w[0] + 1..w[1])
                        .min_by(|&i, &j| (runs[i].at - s).abs().total_cmp(&(runs[j].at - s).abs()))
                        .expect("non-empty gap");
                    best = Some((d, i));
                }
            }
        }
        match best {
            Some((_, i)) => {
                let at = keep.partition_point(|&k| k < i);
                keep.insert(at, i);
            }
            None => break,
        }
    }
    let e = |i: usize| runs[i].at;
    while keep.len() < budget {
        let Some(w) = keep
            .windows(2)
            .filter(|w| w[1] - w[0] >= 2)
            .max_by(|a, b| (e(a[1]) - e(a[0])).total_cmp(&(e(b[1]) - e(b[0]))))
        else {
            break;
        };
        let mid = 0.5 * (e(w[0]) + e(w[1]));
        let i = (w[0] + 1..w[1])
            .min_by(|&i, &j| (e(i) - mid).abs().total_cmp(&(e(j) - mid).abs()))
            .expect("non-empty gap");
        let at = keep.partition_point(|&k| k < i);
        keep.insert(at, i);
    }
    keep
}

fn point_segment_distance(p: PixelPoint, a: PixelPoint, b: PixelPoint) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let ap = p - a;
    let t = ((ap.x * ab.x + ap.y * ab.y) / len2).clamp(0.0, 1.0);
    p.distance(a.lerp(b, t))
}

fn arc_lengths(pts: &[PixelPoint]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(pts.len());
    out.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].distance(w[1]);
        out.push(acc);
    }
    out
}
