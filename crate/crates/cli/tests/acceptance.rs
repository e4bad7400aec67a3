//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gridsketch_cli::{cmd_draw, AgentArgs, DrawArgs};
use gridsketch_core::agent::prompts::ICL_HOUSE;
use gridsketch_core::agent::{
    apply_stop_sequences, Agent, Backend, BackendError, BackendKind, ChatRequest, DecodingParams,
};
use gridsketch_core::curvefit::{
    eval_bezier, fit_bezier, fit_bezier_degree, fit_stroke, invert_user_stroke, sample_polybezier, ControlPoints,
    FitTolerance, TimedSample,
};
use gridsketch_core::grid::{grid_to_pixel, pixel_to_grid, render_grid_background, GridConfig, PixelPoint};
use gridsketch_core::session::{verify_replay, Mode, Party, Session, SessionConfig, SessionEvent, SessionLog};
use gridsketch_core::sketchlang::{
    parse_agent_response, serialize_sketch, serialize_strokes, GridCoordinate, SketchSpec, StrokeSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_point(rng: &mut impl Rng, span: f64) -> PixelPoint {
    PixelPoint::new(rng.gen_range(-span..span), rng.gen_range(-span..span))
}

fn random_cubic(rng: &mut impl Rng) -> ControlPoints {
    let p: Vec<PixelPoint> = (0..4).map(|_| random_point(rng, 1000.0)).collect();
    ControlPoints::cubic(p[0], p[1], p[2], p[3])
}

/// Sorted parameters in [0, 1] with consecutive gaps of at least 0.5/m.
fn spread_ts(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let mut raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
    raw.sort_by(f64::total_cmp);
    let gap = 0.5 / m as f64;
    raw.iter().enumerate().map(|(i, t)| t * 0.5 + i as f64 * gap).collect()
}

fn endpoints() -> Outcome {
    let mut rng = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let cp = random_cubic(&mut rng);
        let p = cp.points();
        worst = worst
            .max(eval_bezier(&cp, 0.0).distance(p[0]))
            .max(eval_bezier(&cp, 1.0).distance(p[3]));
    }
    ensure(worst <= 1e-12, || format!("endpoint error {worst:e}"))?;
    Ok(format!("1000 cubics, max error {worst:e}"))
}

/// Normal equations BᵀB·P = Bᵀx built from the explicit cubic Bernstein
/// basis and solved by Gauss-Jordan elimination with partial pivoting.
fn dense_solve(samples: &[TimedSample]) -> [[f64; 2]; 4] {
    let basis = |t: f64| {
        let u = 1.0 - t;
        [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t]
    };
    let mut m = [[0.0f64; 6]; 4];
    for s in samples {
        let b = basis(s.t);
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] += b[r] * b[c];
            }
            m[r][4] += b[r] * s.point.x;
            m[r][5] += b[r] * s.point.y;
        }
    }
    for col in 0..4 {
        let pivot = (col..4).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, pivot);
        for r in 0..4 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..6 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut out = [[0.0; 2]; 4];
    for (r, row) in m.iter().enumerate() {
        out[r] = [row[4] / row[r], row[5] / row[r]];
    }
    out
}

fn optimality() -> Outcome {
    let mut rng = rng(2);
    let mut worst_rel = 0.0f64;
    for _ in 0..500 {
        let m = rng.gen_range(4..20);
        let ts = spread_ts(&mut rng, m);
        let samples: Vec<TimedSample> = ts.iter().map(|&t| TimedSample::new(random_point(&mut rng, 1000.0), t)).collect();
        let fit = fit_bezier_degree(&samples, 3).map_err(|e| e.to_string())?;
        let want = dense_solve(&samples);
        let scale = want.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for (got, want) in fit.points().iter().zip(want) {
            worst_rel = worst_rel.max((got.x - want[0]).abs() / scale).max((got.y - want[1]).abs() / scale);
        }
    }
    ensure(worst_rel <= 1e-8, || format!("relative error {worst_rel:e}"))?;

    let mut worst_res = 0.0f64;
    for _ in 0..500 {
        let ts = spread_ts(&mut rng, 4);
        let samples: Vec<TimedSample> = ts.iter().map(|&t| TimedSample::new(random_point(&mut rng, 1000.0), t)).collect();
        let (cp, _) = fit_bezier(&samples).map_err(|e| e.to_string())?;
        for s in &samples {
            worst_res = worst_res.max(eval_bezier(&cp, s.t).distance(s.point));
        }
    }
    ensure(worst_res <= 1e-6, || format!("interpolation residual {worst_res:e} px"))?;
    Ok(format!("500 sets rel {worst_rel:e}; 500 interpolations residual {worst_res:e} px"))
}

fn fit_round_trip() -> Outcome {
    let mut rng = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let cp = random_cubic(&mut rng);
        let m = rng.gen_range(6..=16);
        let samples: Vec<TimedSample> =
            spread_ts(&mut rng, m).into_iter().map(|t| TimedSample::new(eval_bezier(&cp, t), t)).collect();
        let fit = fit_bezier_degree(&samples, 3).map_err(|e| e.to_string())?;
        for (a, b) in fit.points().iter().zip(cp.points()) {
            worst = worst.max(a.distance(*b));
        }
    }
    ensure(worst <= 1e-6, || format!("control point error {worst:e} px"))?;
    Ok(format!("1000 cubics, max control point error {worst:e} px"))
}

fn cells(list: &[(u32, u32)]) -> Vec<GridCoordinate> {
    list.iter().map(|&(c, r)| GridCoordinate::new(c, r)).collect()
}

/// Cell center in drawing-area pixels for the default 50×50, 12 px grid.
fn center(col: u32, row: u32) -> PixelPoint {
    PixelPoint::new((col as f64 - 0.5) * 12.0, (50.0 - row as f64 + 0.5) * 12.0)
}

fn corner_idiom() -> Outcome {
    let cfg = GridConfig::default();
    let cases = [
        (
            "upside-down V",
            StrokeSpec::new(cells(&[(13, 27), (18, 37), (18, 37), (24, 27)]), vec![0.0, 0.55, 0.5, 1.0], "v"),
            vec![center(18, 37)],
        ),
        (
            "rectangle",
            StrokeSpec::new(
                cells(&[(13, 27), (24, 27), (24, 27), (24, 11), (24, 11), (13, 11), (13, 11), (13, 27)]),
                vec![0.0, 0.3, 0.25, 0.5, 0.5, 0.75, 0.75, 1.0],
                "rect",
            ),
            vec![center(24, 27), center(24, 11), center(13, 11)],
        ),
    ];
    let mut worst = 0.0f64;
    for (name, stroke, corners) in cases {
        let (pb, _) = fit_stroke(&stroke, &cfg, &FitTolerance::for_grid(&cfg)).map_err(|e| e.to_string())?;
        ensure(pb.segments.len() == corners.len() + 1, || {
            format!("{name}: {} segments for {} corners", pb.segments.len(), corners.len())
        })?;
        for (pair, corner) in pb.segments.windows(2).zip(&corners) {
            worst = worst.max(pair[0].last().distance(*corner)).max(pair[1].first().distance(*corner));
        }
    }
    ensure(worst <= 1e-9, || format!("junction error {worst:e} px"))?;
    Ok(format!("V and rectangle junctions within {worst:e} px"))
}

fn parser() -> Outcome {
    const IDS: [&str; 7] = [
        "house base front rectangle",
        "house base right section",
        "roof front triangle",
        "roof right section",
        "left window square",
        "right window square",
        "front door",
    ];
    let house = parse_agent_response(ICL_HOUSE).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = house.sketch.strokes.iter().map(|s| s.id.as_str()).collect();
    ensure(ids == IDS, || format!("ICL ids {ids:?}"))?;

    let mut rng = rng(5);
    let word = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.gen_range(1..=3);
        (0..n)
            .map(|_| (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect::<String>())
            .collect::<Vec<_>>()
            .join(" ")
    };
    for case in 0..1000 {
        let strokes = (0..rng.gen_range(1..10))
            .map(|_| {
                let m = rng.gen_range(1..=12);
                let pts = (0..m).map(|_| GridCoordinate::new(rng.gen_range(1..=50), rng.gen_range(1..=50))).collect();
                let mut ts: Vec<u32> = (0..m).map(|_| rng.gen_range(0..=100)).collect();
                ts.sort();
                StrokeSpec::new(pts, ts.into_iter().map(|t| t as f64 / 100.0).collect(), word(&mut rng))
            })
            .collect();
        let sketch = SketchSpec {
            concept: word(&mut rng),
            strokes,
        };
        let text = serialize_sketch(&sketch).map_err(|e| e.to_string())?;
        let back = parse_agent_response(&text).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back.sketch == sketch, || format!("case {case} differs after round trip"))?;
    }
    Ok("ICL house gives the 7 named strokes; 1000 round trips identical".into())
}

fn grid_geometry() -> Outcome {
    let cfg = GridConfig::default();
    ensure(cfg.canvas_size() == 612.0 && cfg.drawing_size() == 600.0, || {
        format!("canvas {} drawing {}", cfg.canvas_size(), cfg.drawing_size())
    })?;
    let bg = render_grid_background(&cfg);
    ensure(bg.svg.contains(r#"width="612" height="612""#), || "background is not 612×612".into())?;
    for col in 1..=50 {
        for row in 1..=50 {
            let c = GridCoordinate::new(col, row);
            let p = grid_to_pixel(c, &cfg).map_err(|e| e.to_string())?;
            ensure(p == center(col, row), || format!("{c:?} -> {p:?}"))?;
            ensure(pixel_to_grid(p, &cfg) == c, || format!("{c:?} does not map back"))?;
        }
    }
    Ok("612×612 canvas, 600×600 drawing area, 2500 cells invert".into())
}

/// Always continues the stroke list with five more strokes.
struct Eager;

impl Backend for Eager {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let n = request.prefill().map_or(0, |p| p.matches("</s").count());
        let strokes: Vec<StrokeSpec> = (0..5)
            .map(|i| {
                let k = (n + i) as u32 % 40;
                StrokeSpec::new(cells(&[(5 + k, 5), (10 + k, 20)]), vec![0.0, 1.0], format!("line {}", n + i + 1))
            })
            .collect();
        let text = format!("{}</strokes>\n</answer>", serialize_strokes(&strokes, n + 1).unwrap());
        Ok(apply_stop_sequences(&text, &request.params.stop_sequences))
    }
}

fn determinism() -> Outcome {
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/house.svg"))
        .map_err(|e| format!("golden file: {e}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let args = DrawArgs {
        concept: "house".into(),
        out: dir.path().to_path_buf(),
        edits: vec![],
        agent: AgentArgs {
            backend: Some(BackendKind::MockHouse),
            ..AgentArgs::default()
        },
    };
    for run in 0..2 {
        cmd_draw(&args).map_err(|e| e.to_string())?;
        let svg = std::fs::read_to_string(dir.path().join("sketch.svg")).map_err(|e| e.to_string())?;
        ensure(svg == golden, || format!("run {run}: sketch.svg differs from the golden file"))?;
    }

    let agent = Agent::new(Arc::new(Eager)).with_decoding(DecodingParams::deterministic());
    for j in 1..=3 {
        let mut s = Session::new(Mode::Collab, "lines", SessionConfig {
            opening: Party::Agent,
            ..SessionConfig::for_agent(&agent)
        })
        .map_err(|e| e.to_string())?;
        for turn in 0..3 {
            let before = s.strokes().len();
            let out = s.request_agent_turn(&agent, Some(j)).map_err(|e| e.to_string())?;
            ensure(out.added.len() == j, || format!("j={j} turn {turn}: {} strokes", out.added.len()))?;
            ensure(s.strokes().len() == before + j, || format!("j={j}: stroke count"))?;
            s.submit_user_stroke(&[PixelPoint::new(100.0, 100.0), PixelPoint::new(200.0, 150.0)])
                .map_err(|e| e.to_string())?;
        }
    }
    Ok("golden house bytes reproduced twice; j = 1, 2, 3 strokes per turn exactly".into())
}

fn hausdorff(a: &[PixelPoint], b: &[PixelPoint]) -> f64 {
    let one_way = |a: &[PixelPoint], b: &[PixelPoint]| {
        a.iter()
            .map(|p| b.iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Smallest circumradius over triples of nearby samples.
fn min_turn_radius(pts: &[PixelPoint]) -> f64 {
    pts.windows(11)
        .map(|w| {
            let (a, b, c) = (w[0], w[5], w[10]);
            let cross = ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs();
            if cross < 1e-9 {
                f64::INFINITY
            } else {
                a.distance(b) * b.distance(c) * c.distance(a) / (2.0 * cross)
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn inverse_fidelity() -> Outcome {
    let cfg = GridConfig::default();
    let tol = FitTolerance::for_grid(&cfg);
    let named = [
        StrokeSpec::new(cells(&[(8, 6), (6, 7), (6, 10), (8, 11)]), vec![0.0, 0.3, 0.8, 1.0], "ellipse left"),
        StrokeSpec::new(cells(&[(8, 11), (11, 10), (11, 7), (8, 6)]), vec![0.0, 0.3, 0.7, 1.0], "ellipse right"),
        StrokeSpec::new(
            cells(&[(25, 44), (32, 41), (35, 35), (31, 29), (25, 27), (19, 29), (15, 35), (18, 41), (25, 44)]),
            vec![0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0],
            "circle",
        ),
    ];
    let mut rng = rng(8);
    let mut random = std::iter::from_fn(|| {
        let c: Vec<PixelPoint> =
            (0..4).map(|_| PixelPoint::new(rng.gen_range(30.0..570.0), rng.gen_range(30.0..570.0))).collect();
        let cp = ControlPoints::cubic(c[0], c[1], c[2], c[3]);
        let m: usize = rng.gen_range(4..=8);
        let ts: Vec<f64> = (0..m).map(|i| ((i as f64 / (m - 1) as f64) * 100.0).round() / 100.0).collect();
        let pts = ts.iter().map(|&t| pixel_to_grid(eval_bezier(&cp, t), &cfg)).collect();
        Some(StrokeSpec::new(pts, ts, "random"))
    });

    let (mut tested, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut named_tested = 0;
    let mut corpus = named.into_iter().chain(&mut random);
    while tested < 200 {
        let stroke = corpus.next().unwrap();
        let (pb, _) = fit_stroke(&stroke, &cfg, &tol).map_err(|e| e.to_string())?;
        let drawn: Vec<PixelPoint> = sample_polybezier(&pb, 100).iter().map(|s| s.point).collect();
        // Smooth means no turn tighter than one cell.
        if min_turn_radius(&drawn) < cfg.cell_size {
            skipped += 1;
            continue;
        }
        let spec = invert_user_stroke(&drawn, &cfg);
        let (back, _) =
            fit_stroke(&spec, &cfg, &FitTolerance::for_user_ink(&cfg)).map_err(|e| e.to_string())?;
        let redrawn: Vec<PixelPoint> = sample_polybezier(&back, 100).iter().map(|s| s.point).collect();
        let d = hausdorff(&drawn, &redrawn);
        ensure(d <= cfg.cell_size, || format!("{}: deviation {d:.2} px", stroke.id))?;
        worst = worst.max(d);
        tested += 1;
        if stroke.id != "random" {
            named_tested += 1;
        }
    }
    Ok(format!(
        "{tested} smooth strokes ({named_tested} of 3 prompt examples, {skipped} tighter ones skipped), max deviation {worst:.2} px"
    ))
}

/// Continues the shared list with a random number of strokes, and sometimes
/// fails or answers with prose.
struct Chaos(Mutex<ChaCha8Rng>);

impl Backend for Chaos {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut rng = self.0.lock().unwrap();
        let roll: f64 = rng.gen();
        if roll < 0.08 {
            return Err(BackendError::Status {
                code: 503,
                body: "overloaded".into(),
            });
        }
        if roll < 0.12 {
            return Err(BackendError::Timeout);
        }
        if roll < 0.25 {
            return Ok("Let me think about it.".into());
        }
        let n = request.prefill().map_or(0, |p| p.matches("</s").count());
        let strokes: Vec<StrokeSpec> = (0..rng.gen_range(0..=5))
            .map(|i| {
                let m = rng.gen_range(1..=6);
                let pts = (0..m).map(|_| GridCoordinate::new(rng.gen_range(1..=50), rng.gen_range(1..=50))).collect();
                let mut ts: Vec<f64> = (0..m).map(|_| rng.gen_range(0..=100) as f64 / 100.0).collect();
                ts.sort_by(f64::total_cmp);
                StrokeSpec::new(pts, ts, format!("part {}", n + i + 1))
            })
            .collect();
        let text = format!("{}</strokes>\n</answer>", serialize_strokes(&strokes, n + 1).unwrap());
        Ok(apply_stop_sequences(&text, &request.params.stop_sequences))
    }
}

fn scribble(rng: &mut impl Rng) -> Vec<PixelPoint> {
    let mut p = PixelPoint::new(rng.gen_range(0.0..600.0), rng.gen_range(0.0..600.0));
    let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut out = vec![p];
    for _ in 1..rng.gen_range(2..40) {
        heading += rng.gen_range(-0.4..0.4);
        p = PixelPoint::new(p.x + 8.0 * heading.cos(), p.y + 8.0 * heading.sin());
        out.push(p);
    }
    out
}

fn one_session(seed: u64) -> Result<SessionLog, String> {
    let mut rng = rng(seed);
    let agent = Agent::new(Arc::new(Chaos(Mutex::new(ChaCha8Rng::seed_from_u64(!seed)))))
        .with_decoding(DecodingParams::deterministic())
        .with_max_retries(2);
    let opening = if rng.gen_bool(0.5) { Party::User } else { Party::Agent };
    let mut s = Session::new(Mode::Collab, "butterfly", SessionConfig {
        opening,
        ..SessionConfig::for_agent(&agent)
    })
    .map_err(|e| e.to_string())?;
    for step in 0..rng.gen_range(2..10) {
        let before = s.clone();
        match s.turn() {
            Party::User => {
                ensure(s.request_agent_turn(&agent, None).is_err() && s == before, || {
                    format!("step {step}: agent moved out of turn")
                })?;
                if rng.gen_bool(0.2) {
                    let _ = s.submit_user_stroke(&[PixelPoint::new(f64::NAN, 0.0)]);
                    ensure(s == before, || format!("step {step}: invalid stroke changed state"))?;
                }
                s.submit_user_stroke(&scribble(&mut rng)).map_err(|e| e.to_string())?;
            }
            Party::Agent => {
                ensure(s.submit_user_stroke(&scribble(&mut rng)).is_err() && s == before, || {
                    format!("step {step}: user moved out of turn")
                })?;
                let j = rng.gen_range(1..=3);
                match s.request_agent_turn(&agent, Some(j)) {
                    Ok(out) => ensure(out.added.len() <= j, || format!("step {step}: {} > {j}", out.added.len()))?,
                    Err(_) => ensure(s == before, || format!("step {step}: failed turn changed state"))?,
                }
            }
        }
    }
    let log = s.finalize().map_err(|e| e.to_string())?;
    let mut turn = opening;
    for e in &log.events {
        match e {
            SessionEvent::StrokeAdded { provenance, .. } => {
                ensure(*provenance == turn, || "stroke out of turn in the log".into())?
            }
            SessionEvent::TurnChanged { turn: next } => {
                ensure(*next == turn.other(), || "turns do not alternate".into())?;
                turn = *next;
            }
            _ => {}
        }
    }
    Ok(log)
}

fn session_replay() -> Outcome {
    let mut strokes = 0;
    for seed in 0..50 {
        let log = one_session(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let reread = SessionLog::from_json(&log.to_json()).map_err(|e| e.to_string())?;
        let replayed = verify_replay(&reread).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(replayed.canvas(false).svg == log.final_svg, || format!("seed {seed}: SVG differs"))?;
        strokes += replayed.strokes().len();
    }
    Ok(format!("50 sessions ({strokes} strokes) replayed byte-exactly"))
}

#[cfg(feature = "live")]
fn live_smoke() -> Option<Outcome> {
    // Needs credentials and costs money, so it only runs on request.
    let config = std::env::var_os("GRIDSKETCH_LIVE_CONFIG")?;
    Some((|| {
        let cfg = gridsketch_core::agent::BackendConfig::load(Path::new(&config)).map_err(|e| e.to_string())?;
        let agent = Agent::from_config(&cfg).map_err(|e| e.to_string())?;
        let mut s = Session::new(Mode::SoloAgent, "house", SessionConfig::for_agent(&agent))
            .map_err(|e| e.to_string())?;
        s.generate(&agent).map_err(|e| e.to_string())?;
        let n = s.strokes().len();
        ensure(n >= 3, || format!("{n} strokes"))?;
        Ok(format!("{n} strokes from {}", cfg.model))
    })())
}

#[cfg(not(feature = "live"))]
fn live_smoke() -> Option<Outcome> {
    None
}

fn main() {
    type Check = (&'static str, Option<Duration>, fn() -> Outcome);
    let checks: [Check; 9] = [
        ("bezier endpoints", Some(Duration::from_secs(1)), endpoints),
        ("least-squares optimality", Some(Duration::from_secs(5)), optimality),
        ("fit round trip", Some(Duration::from_secs(1)), fit_round_trip),
        ("corner idiom", None, corner_idiom),
        ("parser conformance", None, parser),
        ("grid geometry", None, grid_geometry),
        ("end-to-end determinism", None, determinism),
        ("inverse-conversion fidelity", None, inverse_fidelity),
        ("session replay", None, session_replay),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, check) in checks {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let took = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(limit)) if took > limit => Err(format!("took {took:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {name:<28} {detail} [{took:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<28} {why} [{took:.2?}]");
            }
        }
    }
    match live_smoke() {
        Some(Ok(detail)) => println!("PASS  {:<28} {detail}", "live smoke"),
        Some(Err(why)) => {
            failed += 1;
            println!("FAIL  {:<28} {why}", "live smoke");
        }
        None => println!("SKIP  {:<28} needs --features live and GRIDSKETCH_LIVE_CONFIG", "live smoke"),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
