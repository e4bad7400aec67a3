//! HTTP and WebSocket service for sketching sessions.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create `{mode, concept, opening?, strokes_per_turn?}` |
//! | GET | `/sessions/{id}` | current state |
//! | POST | `/sessions/{id}/strokes` | user stroke `{points: [[x, y], ...]}` in canvas pixels |
//! | POST | `/sessions/{id}/agent-turn` | agent turn `{strokes?}` |
//! | POST | `/sessions/{id}/edit` | editing instruction `{instruction}` |
//! | POST | `/sessions/{id}/finalize` | submit; returns the session log |
//! | GET | `/sessions/{id}/log` | session log so far |
//! | GET | `/sessions/{id}/canvas.svg?grid=true` | canvas |
//! | WS | `/sessions/{id}/events` | stroke, turn, agent-done and finalized events |
//!
//! Errors come back as `{error, message, retryable}`.

pub mod api;
mod config;
mod state;

use std::future::Future;

pub use api::{router, ApiError, ErrorBody, SessionView, StreamEvent, StrokeView, TurnResponse};
pub use config::{ConfigError, ServerConfig};
pub use state::AppState;

/// Serve until `shutdown` resolves, then close event streams, let open
/// requests finish and write every live session to the store.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let closing = state.clone();
    let signal = async move {
        shutdown.await;
        log::info!("shutting down");
        closing.begin_shutdown();
    };
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(signal).await?;
    for (id, err) in state.flush() {
        log::error!("could not save session {id}: {err}");
    }
    Ok(())
}

/// Resolves on ctrl-c, or SIGTERM on Unix.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
