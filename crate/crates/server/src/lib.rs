//! HTTP JSON service over a trained model and its corpus.
//!
//! Endpoints: `GET /health`, `GET /classes`, `GET /essence/{label}`,
//! `POST /combine`, `POST /afford-test`. Every body carries `schema_version`.
//! Grids travel as `[value, count]` run-length pairs with `dim`; add
//! `?raw=true` to also receive the decoder's occupancy probabilities.

mod api;
mod session;

pub use api::{grid_from_runs, grid_runs, importance_histogram, router, ApiError, AppState, SCHEMA_VERSION};
pub use session::{
    affordance_report, AffordParams, AffordanceReport, Combination, Essence, LogEntry, NearestObject, Session,
    SessionError, DECODE_THRESHOLD,
};

/// Serves `state` on `addr` until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
