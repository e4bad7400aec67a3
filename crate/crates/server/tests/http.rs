use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use gridsketch_core::agent::{Agent, BackendError, FixedBackend, ScriptedBackend};
use gridsketch_core::grid::render_grid_background;
use gridsketch_core::session::{verify_replay, SessionLog, SessionStore};
use gridsketch_server::{router, serve, AppState, ErrorBody, SessionView, StreamEvent, TurnResponse};
use serde_json::{json, Value};
use tower::ServiceExt;

fn house_state(dir: &std::path::Path) -> AppState {
    let agent = Agent::new(Arc::new(FixedBackend::house()));
    AppState::new(agent, SessionStore::open(dir).unwrap(), 1)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn json_call<T: serde::de::DeserializeOwned>(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, T) {
    let (status, bytes) = call(app, method, uri, body).await;
    let value = serde_json::from_slice(&bytes)
        .unwrap_or_else(|e| panic!("{method} {uri}: {status} {e}: {}", String::from_utf8_lossy(&bytes)));
    (status, value)
}

async fn create(app: &Router, mode: &str, concept: &str) -> SessionView {
    let (status, view) = json_call(app, "POST", "/sessions", Some(json!({"mode": mode, "concept": concept}))).await;
    assert_eq!(status, StatusCode::CREATED);
    view
}

/// A short horizontal drag in canvas pixels.
fn drag() -> Value {
    json!({"points": (0..20).map(|i| [112.0 + 10.0 * i as f64, 306.0]).collect::<Vec<_>>()})
}

#[tokio::test]
async fn collab_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let state = house_state(dir.path());
    let app = router(state.clone());

    let s = create(&app, "collab", "butterfly").await;
    let other = create(&app, "collab", "butterfly").await;
    assert_ne!(s.id, other.id);
    assert_eq!(s.canvas_size, 612.0);
    assert_eq!(s.drawing_origin, [12.0, 0.0]);

    let (status, svg) = call(&app, "GET", &format!("/sessions/{}/canvas.svg", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(String::from_utf8(svg).unwrap(), render_grid_background(&state.agent().grid).svg);

    let (status, after): (_, SessionView) =
        json_call(&app, "POST", &format!("/sessions/{}/strokes", s.id), Some(drag())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after.strokes.len(), 1);
    assert_eq!(after.strokes[0].color.to_string(), "#2ea043");
    assert_eq!(after.turn.to_string(), "agent");
    // Canvas x = 112 is drawing-area x = 100, the center of column 9.
    assert_eq!(after.strokes[0].points[0], "x9y25");

    let (status, err): (_, ErrorBody) =
        json_call(&app, "POST", &format!("/sessions/{}/strokes", s.id), Some(drag())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err.error, "not-your-turn");

    let (status, turn): (_, TurnResponse) =
        json_call(&app, "POST", &format!("/sessions/{}/agent-turn", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(turn.added.len(), 1);
    assert_eq!(turn.added[0].color.to_string(), "#e84a9a");
    assert_eq!(turn.session.turn.to_string(), "user");

    let (status, log): (_, SessionLog) = json_call(&app, "POST", &format!("/sessions/{}/finalize", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    verify_replay(&log).unwrap();
    for ext in ["json", "svg", "png"] {
        assert!(dir.path().join(format!("{}.{ext}", s.id)).exists(), "{ext}");
    }
    let (status, err): (_, ErrorBody) = json_call(&app, "POST", &format!("/sessions/{}/finalize", s.id), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err.error, "session-closed");
}

#[tokio::test]
async fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(house_state(dir.path()));

    let (status, err): (_, ErrorBody) =
        json_call(&app, "POST", "/sessions", Some(json!({"mode": "solo", "concept": "cat"}))).await;
    assert_eq!((status, err.error.as_str()), (StatusCode::BAD_REQUEST, "bad-mode"));
    let (status, err): (_, ErrorBody) =
        json_call(&app, "POST", "/sessions", Some(json!({"mode": "collab", "concept": " "}))).await;
    assert_eq!((status, err.error.as_str()), (StatusCode::BAD_REQUEST, "empty-concept"));

    let (status, err): (_, ErrorBody) = json_call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!((status, err.error.as_str()), (StatusCode::NOT_FOUND, "not-found"));
    let (status, _) = call(&app, "GET", "/sessions/..%2Fsecret", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let solo = create(&app, "solo-user", "house").await;
    let (status, err): (_, ErrorBody) =
        json_call(&app, "POST", &format!("/sessions/{}/agent-turn", solo.id), None).await;
    assert_eq!((status, err.error.as_str()), (StatusCode::CONFLICT, "wrong-mode"));
    let (status, err): (_, ErrorBody) =
        json_call(&app, "POST", &format!("/sessions/{}/strokes", solo.id), Some(json!({"points": []}))).await;
    assert_eq!((status, err.error.as_str()), (StatusCode::BAD_REQUEST, "bad-stroke"));

    let collab = create(&app, "collab", "house").await;
    let (status, err): (_, ErrorBody) = json_call(
        &app,
        "POST",
        &format!("/sessions/{}/agent-turn", collab.id),
        Some(json!({"strokes": "many"})),
    )
    .await;
    assert_eq!((status, err.error.as_str()), (StatusCode::BAD_REQUEST, "bad-body"));
}

#[tokio::test]
async fn backend_failure_is_retryable_and_harmless() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(ScriptedBackend::with_results([Err(BackendError::Status {
        code: 503,
        body: "busy".into(),
    })]));
    let state = AppState::new(Agent::new(backend), SessionStore::open(dir.path()).unwrap(), 1);
    let app = router(state);
    let (_, s): (_, SessionView) = json_call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"mode": "collab", "concept": "fish", "opening": "agent"})),
    )
    .await;
    let (status, err): (_, ErrorBody) = json_call(&app, "POST", &format!("/sessions/{}/agent-turn", s.id), None).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert!(err.retryable);
    let (_, now): (_, SessionView) = json_call(&app, "GET", &format!("/sessions/{}", s.id), None).await;
    assert_eq!(now, s);
}

#[tokio::test]
async fn solo_agent_turns_until_done() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(house_state(dir.path()));
    let s = create(&app, "solo-agent", "house").await;
    let mut total = 0;
    for _ in 0..10 {
        let (status, turn): (_, TurnResponse) = json_call(
            &app,
            "POST",
            &format!("/sessions/{}/agent-turn", s.id),
            Some(json!({"strokes": 3})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert!(turn.added.len() <= 3);
        total += turn.added.len();
        if turn.completed {
            assert!(turn.session.agent_done);
            break;
        }
    }
    assert_eq!(total, 7);
}

#[tokio::test]
async fn concurrent_turns_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(house_state(dir.path()));
    let (_, s): (_, SessionView) = json_call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"mode": "collab", "concept": "cat", "opening": "agent"})),
    )
    .await;
    let uri = format!("/sessions/{}/agent-turn", s.id);
    let calls = (0..8).map(|_| {
        let app = app.clone();
        let uri = uri.clone();
        tokio::spawn(async move { call(&app, "POST", &uri, None).await.0 })
    });
    let mut statuses = Vec::new();
    for c in calls {
        statuses.push(c.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1);
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CONFLICT).count(), 7);
    let (_, now): (_, SessionView) = json_call(&app, "GET", &format!("/sessions/{}", s.id), None).await;
    assert_eq!(now.strokes.len(), 1);
}

#[tokio::test]
async fn events_stream_and_shutdown_flush() {
    let dir = tempfile::tempdir().unwrap();
    let state = house_state(dir.path());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, state.clone(), async {
        let _ = stopped.await;
    }));

    let app = router(state.clone());
    let s = create(&app, "collab", "rabbit").await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{}/events", s.id))
        .await
        .unwrap();
    let (status, _) = call(&app, "POST", &format!("/sessions/{}/strokes", s.id), Some(drag())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "POST", &format!("/sessions/{}/agent-turn", s.id), None).await;
    assert_eq!(status, StatusCode::OK);

    let mut seen = Vec::new();
    while seen.len() < 4 {
        let msg = ws.next().await.unwrap().unwrap();
        seen.push(serde_json::from_str::<StreamEvent>(msg.to_text().unwrap()).unwrap());
    }
    let (_, view): (_, SessionView) = json_call(&app, "GET", &format!("/sessions/{}", s.id), None).await;
    assert_eq!(
        seen,
        [
            StreamEvent::Stroke(view.strokes[0].clone()),
            StreamEvent::Turn { turn: "agent".parse().unwrap() },
            StreamEvent::Stroke(view.strokes[1].clone()),
            StreamEvent::Turn { turn: "user".parse().unwrap() },
        ]
    );
    // Clients may send pings or chatter without effect.
    ws.send(tokio_tungstenite::tungstenite::Message::Text("hi".into())).await.unwrap();

    std::fs::remove_file(dir.path().join(format!("{}.json", s.id))).unwrap();
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();

    // The open session was written on the way out, still active, and a
    // fresh service resumes it.
    let log = SessionStore::open(dir.path()).unwrap().load(&s.id).unwrap();
    assert_eq!(serde_json::to_value(log.status).unwrap(), "active");
    let resumed = router(house_state(dir.path()));
    let (status, again): (_, SessionView) = json_call(&resumed, "GET", &format!("/sessions/{}", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, view);
}

#[tokio::test]
async fn edit_appends_strokes() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(house_state(dir.path()));
    let s = create(&app, "solo-agent", "house").await;
    let uri = format!("/sessions/{}/agent-turn", s.id);
    let (_, first): (_, TurnResponse) = json_call(&app, "POST", &uri, Some(json!({"strokes": 2}))).await;
    let (status, edited): (_, TurnResponse) = json_call(
        &app,
        "POST",
        &format!("/sessions/{}/edit", s.id),
        Some(json!({"instruction": "Add a chimney"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(edited.added.len(), 7);
    assert_eq!(edited.added[0].index, 2);
    assert_eq!(edited.session.strokes[..2], first.session.strokes[..]);
}
