use std::sync::{Arc, RwLock};

use affordgen::affordlab::CubeProbe;
use affordgen::voxcore::{rle_decode, rle_encode, DensityGrid, VoxelGrid};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::session::{affordance_report, AffordParams, AffordanceReport, NearestObject, Session, SessionError};

pub const SCHEMA_VERSION: u32 = 1;

/// Shared server state: empty until a session is loaded.
#[derive(Clone, Default)]
pub struct AppState {
    session: Arc<RwLock<Option<Arc<Session>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_session(session: Session) -> Self {
        let s = Self::new();
        s.load(session);
        s
    }

    pub fn load(&self, session: Session) {
        *self.session.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(session));
    }

    fn session(&self) -> Result<Arc<Session>, ApiError> {
        self.session
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
            .ok_or(ApiError(StatusCode::SERVICE_UNAVAILABLE, "no model loaded".into()))
    }
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "schema_version": SCHEMA_VERSION, "error": self.1 });
        (self.0, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::UnknownClass(_) => StatusCode::NOT_FOUND,
            SessionError::InvalidPercent { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn respond(mut body: Value) -> Response {
    body["schema_version"] = json!(SCHEMA_VERSION);
    Json(body).into_response()
}

/// Binvox-style run-length encoding: `[value, count]` pairs, count <= 255,
/// over the grid's flat order (x fastest, then z, then y).
pub fn grid_runs(grid: &VoxelGrid) -> Vec<[u8; 2]> {
    rle_encode(grid.occupancy()).into_iter().map(|(v, n)| [v, n]).collect()
}

pub fn grid_from_runs(dim: usize, runs: &[[u8; 2]]) -> Result<VoxelGrid, String> {
    let pairs: Vec<(u8, u8)> = runs.iter().map(|r| (r[0], r[1])).collect();
    if pairs.iter().any(|&(v, _)| v > 1) {
        return Err("run values must be 0 or 1".into());
    }
    let occ = rle_decode(&pairs);
    VoxelGrid::from_occupancy(dim, occ, [0.0; 3], 1.0).map_err(|e| e.to_string())
}

#[derive(Deserialize, Default)]
struct RawFlag {
    #[serde(default)]
    raw: bool,
}

fn grid_fields(body: &mut Value, grid: &VoxelGrid, density: &DensityGrid, raw: bool) {
    body["dim"] = json!(grid.dim());
    body["grid"] = json!(grid_runs(grid));
    if raw {
        body["probabilities"] = json!(density.values);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/classes", get(list_classes))
        .route("/essence/{label}", get(essence))
        .route("/combine", post(combine))
        .route("/afford-test", post(afford_test))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Response {
    let loaded = state.session().ok();
    respond(json!({
        "status": "ok",
        "model_loaded": loaded.is_some(),
        "requests_served": loaded.map_or(0, |s| s.request_log().len()),
    }))
}

#[derive(Serialize)]
struct ClassInfo {
    label: String,
    affordances: Vec<String>,
    sample_count: usize,
}

async fn list_classes(State(state): State<AppState>) -> Result<Response, ApiError> {
    let s = state.session()?;
    let classes: Vec<ClassInfo> = s
        .classes()
        .0
        .iter()
        .map(|c| ClassInfo {
            label: c.class_label.clone(),
            affordances: c.affordances.iter().cloned().collect(),
            sample_count: s.sample_count(&c.class_label),
        })
        .collect();
    Ok(respond(json!({ "classes": classes })))
}

/// Ten equal-width bins over `[0, 1]`; the top bin includes 1.
pub fn importance_histogram(scores: &[f64]) -> Vec<usize> {
    let mut bins = vec![0; 10];
    for &s in scores {
        bins[((s.clamp(0.0, 1.0) * 10.0) as usize).min(9)] += 1;
    }
    bins
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn essence(
    State(state): State<AppState>,
    Path(label): Path<String>,
    Query(flag): Query<RawFlag>,
) -> Result<Response, ApiError> {
    let s = state.session()?;
    blocking(move || {
        let e = s.essence(&label)?;
        let mut body = json!({
            "label": label,
            "sample_count": e.essence.sample_count,
            "importance_histogram": {
                "bin_edges": (0..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>(),
                "counts": importance_histogram(&e.importance.scores),
            },
        });
        grid_fields(&mut body, &e.grid(), &e.density, flag.raw);
        Ok(respond(body))
    })
    .await
}

#[derive(Deserialize)]
struct CombineBody {
    base: String,
    top: String,
    base_percent: f64,
    top_percent: f64,
}

#[derive(Serialize)]
struct ReportPayload {
    supportability: SupportPayload,
    containability: ContainPayload,
}

#[derive(Serialize)]
struct SupportPayload {
    size: usize,
    footprint: usize,
    supported_count: usize,
    /// Row-major with `x` fastest.
    supported: Vec<bool>,
    probe: CubeProbe,
}

#[derive(Serialize)]
struct ContainPayload {
    spheres_placed: usize,
    contained_volume: f64,
    bounding_box_volume: f64,
    ratio: f64,
    sphere_radius: f64,
}

impl From<&AffordanceReport> for ReportPayload {
    fn from(r: &AffordanceReport) -> Self {
        let s = &r.supportability;
        let c = &r.containability;
        ReportPayload {
            supportability: SupportPayload {
                size: s.size,
                footprint: s.footprint,
                supported_count: s.supported_count(),
                supported: s.supported.clone(),
                probe: r.probe,
            },
            containability: ContainPayload {
                spheres_placed: c.spheres_placed,
                contained_volume: c.contained_volume,
                bounding_box_volume: c.bounding_box_volume,
                ratio: c.ratio,
                sphere_radius: r.sphere_radius,
            },
        }
    }
}

async fn combine(
    State(state): State<AppState>,
    Query(flag): Query<RawFlag>,
    Json(req): Json<CombineBody>,
) -> Result<Response, ApiError> {
    let s = state.session()?;
    blocking(move || {
        let c = s.combine(&req.base, &req.top, req.base_percent, req.top_percent, &AffordParams::default())?;
        let nearest: &[NearestObject] = &c.nearest;
        let mut body = json!({
            "base": req.base,
            "top": req.top,
            "base_percent": req.base_percent,
            "top_percent": req.top_percent,
            "affordance_report": ReportPayload::from(&c.report),
            "nearest": nearest,
        });
        grid_fields(&mut body, &c.grid, &c.density, flag.raw);
        Ok(respond(body))
    })
    .await
}

#[derive(Deserialize)]
struct AffordBody {
    dim: usize,
    grid: Vec<[u8; 2]>,
    /// Physical grid edge in meters.
    #[serde(default = "default_scale")]
    scale: f64,
    #[serde(default)]
    probe_side: Option<f64>,
    #[serde(default)]
    flatness_tol: Option<u32>,
    #[serde(default)]
    sphere_radius: Option<f64>,
}

fn default_scale() -> f64 {
    affordgen::dataset::DESK_SCALE
}

async fn afford_test(Json(req): Json<AffordBody>) -> Result<Response, ApiError> {
    let bad = |m: String| ApiError(StatusCode::UNPROCESSABLE_ENTITY, m);
    if req.dim == 0 || req.dim > 256 {
        return Err(bad(format!("dim {} out of range", req.dim)));
    }
    if !(req.scale > 0.0 && req.scale.is_finite()) {
        return Err(bad(format!("scale must be positive, got {}", req.scale)));
    }
    let grid = grid_from_runs(req.dim, &req.grid)
        .map_err(bad)?
        .with_placement([-req.scale / 2.0, 0.0, -req.scale / 2.0], req.scale);
    let defaults = CubeProbe::default();
    let params = AffordParams {
        probe: CubeProbe {
            side: req.probe_side.unwrap_or(defaults.side),
            flatness_tol: req.flatness_tol.unwrap_or(defaults.flatness_tol),
            ..defaults
        },
        sphere_radius: req.sphere_radius,
    };
    let report = blocking(move || affordance_report(&grid, &params).map_err(|e| bad(e.to_string()))).await?;
    Ok(respond(json!({ "affordance_report": ReportPayload::from(&report) })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_round_trip() {
        let mut g = VoxelGrid::empty(7);
        g.fill_box([1, 2, 3], [6, 7, 5], true);
        let back = grid_from_runs(7, &grid_runs(&g)).unwrap();
        assert_eq!(back.occupancy(), g.occupancy());
        assert!(grid_from_runs(7, &[[1, 10]]).is_err());
        assert!(grid_from_runs(1, &[[2, 1]]).is_err());
    }

    #[test]
    fn histogram_bins() {
        let h = importance_histogram(&[0.0, 0.05, 0.1, 0.55, 0.99, 1.0]);
        assert_eq!(h, vec![2, 1, 0, 0, 0, 1, 0, 0, 0, 2]);
        assert_eq!(h.iter().sum::<usize>(), 6);
    }
}
