//! HTTP render service over an immutable trained model.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use usfield::io::{slice_png, Axis};
use usfield::trainer::TrainedModel;
use usfield::volume::VolumeGrid;
use usfield::Result;

use crate::view::{render_png, RenderRequest};

/// Shared read-only state: the model, its panorama and the `/model` body.
pub struct Service {
    pub model: TrainedModel,
    pub panorama: VolumeGrid,
    summary: Value,
}

impl Service {
    /// Precomputes the panorama at the model's layout resolution.
    pub fn new(model: TrainedModel) -> Result<Self> {
        let panorama = model.panorama(model.layout.planes)?;
        let summary = json!({
            "field": model.params.config,
            "probe": model.probe,
            "sampler": model.sampler,
            "grid": {
                "width": model.grid.width,
                "height": model.grid.height,
                "spacing_mm": model.grid.spacing_mm,
            },
            "panorama": {
                "dims": panorama.dims,
                "boundary_planes": model.layout.boundary_planes,
            },
            "trajectory": model.trajectory,
        });
        Ok(Self {
            model,
            panorama,
            summary,
        })
    }
}

fn error(status: StatusCode, reason: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": reason.to_string() }))).into_response()
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn model(State(s): State<Arc<Service>>) -> Json<Value> {
    Json(s.summary.clone())
}

async fn render(State(s): State<Arc<Service>>, body: Bytes) -> Response {
    let request: RenderRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    if let Err(e) = request.resolve(&s.model) {
        return error(StatusCode::BAD_REQUEST, e);
    }
    match tokio::task::spawn_blocking(move || render_png(&s.model, &request)).await {
        Ok(Ok(bytes)) => png(bytes),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("render failed: {e}")),
    }
}

async fn panorama_slice(State(s): State<Arc<Service>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let axis = match q.get("axis").map(|a| a.parse::<Axis>()) {
        Some(Ok(a)) => a,
        Some(Err(e)) => return error(StatusCode::BAD_REQUEST, e),
        None => Axis::Z,
    };
    let index = match q.get("index").map(|i| i.parse::<usize>()) {
        Some(Ok(i)) => i,
        Some(Err(e)) => return error(StatusCode::BAD_REQUEST, format!("index: {e}")),
        None => return error(StatusCode::BAD_REQUEST, "missing query parameter `index`"),
    };
    match slice_png(&s.panorama, axis, index) {
        Ok(bytes) => png(bytes),
        Err(e) => error(StatusCode::BAD_REQUEST, e),
    }
}

pub fn router(state: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/render", post(render))
        .route("/panorama/slice", get(panorama_slice))
        .with_state(state)
}

/// Binds `addr` (failing if it is taken) and serves on a background thread.
pub fn spawn(state: Arc<Service>, addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = std::net::TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let handle = std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, router(state)).await
        })
    });
    Ok((local, handle))
}
