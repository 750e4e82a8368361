//! HTTP render service.
//!
//! * `POST /render`: body is a [`RenderRequest`](crate::view::RenderRequest);
//!   answers `image/png` with an `x-render-time-ms` header.
//! * `GET /scene/info`: Gaussian count, center bounds, checkpoint version and
//!   debug terms.
//!
//! Errors are JSON `{"error": "..."}` with status 400 (malformed body),
//! 413 (image side over the limit), 422 (invalid pose), 429 (render queue
//! full) or 503 (scene still loading).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use splatlight_core::render::{render, render_debug, DebugTerm, RenderOptions};
use splatlight_core::scene::GaussianScene;
use splatlight_core::shading::Composition;
use tokio::sync::{Semaphore, SemaphorePermit};
use tower_http::cors::CorsLayer;

use crate::config::ServeConfig;
use crate::imageio::{encode_png, ColorSpace};
use crate::view::{parse_request, ViewError};

pub const RENDER_TIME_HEADER: &str = "x-render-time-ms";

/// Scene served for the lifetime of the process.
#[derive(Debug)]
pub struct LoadedScene {
    pub scene: GaussianScene,
    pub version: u32,
}

#[derive(Debug)]
pub struct AppState {
    scene: OnceLock<Arc<LoadedScene>>,
    limits: ServeConfig,
    render: RenderOptions,
    workers: Semaphore,
    waiting: AtomicUsize,
}

impl AppState {
    /// State with no scene yet; every endpoint answers 503 until [`AppState::set_scene`].
    pub fn loading(limits: ServeConfig, render: RenderOptions) -> Arc<Self> {
        Arc::new(AppState {
            scene: OnceLock::new(),
            workers: Semaphore::new(limits.workers.max(1)),
            waiting: AtomicUsize::new(0),
            limits,
            render,
        })
    }

    pub fn ready(scene: LoadedScene, limits: ServeConfig, render: RenderOptions) -> Arc<Self> {
        let s = Self::loading(limits, render);
        s.set_scene(scene);
        s
    }

    /// Installs the scene; later calls are ignored.
    pub fn set_scene(&self, scene: LoadedScene) {
        let _ = self.scene.set(Arc::new(scene));
    }

    pub fn is_ready(&self) -> bool {
        self.scene.get().is_some()
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn loading() -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "scene is still loading")
    }
}

impl From<ViewError> for ApiError {
    fn from(e: ViewError) -> Self {
        let status = match e {
            ViewError::Malformed(_) => StatusCode::BAD_REQUEST,
            ViewError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ViewError::Pose(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body {
            error: String,
        }
        (self.status, Json(Body { error: self.message })).into_response()
    }
}

#[derive(Debug, Serialize)]
pub struct SceneInfo {
    pub count: usize,
    pub bounds: Option<Bounds>,
    pub checkpoint_version: u32,
    pub debug_terms: Vec<&'static str>,
    pub compositions: Vec<&'static str>,
    pub max_side: u32,
}

#[derive(Debug, Serialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

async fn scene_info(State(state): State<Arc<AppState>>) -> Result<Json<SceneInfo>, ApiError> {
    let loaded = state.scene.get().ok_or_else(ApiError::loading)?;
    Ok(Json(SceneInfo {
        count: loaded.scene.len(),
        bounds: loaded.scene.bounds().map(|(min, max)| Bounds { min, max }),
        checkpoint_version: loaded.version,
        debug_terms: DebugTerm::ALL.iter().map(|t| t.name()).collect(),
        compositions: Composition::ALL.iter().map(|c| c.label()).collect(),
        max_side: state.limits.max_side,
    }))
}

/// Waits for a render slot, or fails with 429 when the queue is full.
async fn acquire_worker(state: &AppState) -> Result<SemaphorePermit<'_>, ApiError> {
    if let Ok(p) = state.workers.try_acquire() {
        return Ok(p);
    }
    let queued = state.waiting.fetch_add(1, Ordering::SeqCst) + 1;
    if queued > state.limits.queue {
        state.waiting.fetch_sub(1, Ordering::SeqCst);
        return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "render queue is full"));
    }
    let p = state.workers.acquire().await;
    state.waiting.fetch_sub(1, Ordering::SeqCst);
    p.map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "service is shutting down"))
}

async fn render_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let loaded = state.scene.get().cloned().ok_or_else(ApiError::loading)?;
    let view = parse_request(&body)?.validate(state.limits.max_side)?;
    let opts = RenderOptions {
        mask: view.mask,
        ..state.render
    };
    let permit = acquire_worker(&state).await?;
    let job = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let img = match view.debug {
            Some(t) => render_debug(&loaded.scene, &view.camera, view.light, &opts, t),
            None => render(&loaded.scene, &view.camera, view.light, &opts).image,
        };
        let ms = start.elapsed().as_secs_f64() * 1e3;
        encode_png(&img, ColorSpace::Srgb).map(|png| (png, ms))
    });
    let result = job.await;
    drop(permit);
    let (png, ms) = result
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut resp = png.into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(
        RENDER_TIME_HEADER,
        HeaderValue::from_str(&format!("{ms:.3}")).expect("ascii header"),
    );
    Ok(resp)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/render", post(render_handler))
        .route("/scene/info", get(scene_info))
        .layer(CorsLayer::permissive())
        .with_state(state)
}
