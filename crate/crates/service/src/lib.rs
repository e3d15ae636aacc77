//! HTTP front end for the panorama renderer.
//!
//! Scenes (top-down PNG, OCC1 grid, optional JSON metadata) are uploaded
//! once and addressed by the digest of their payloads; renders are served
//! as base64 PNGs and cached by request.

pub mod error;
pub mod job;
pub mod store;

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use panoforge::renderer::{default_workers, RenderSidecar};
use serde::{Deserialize, Serialize};
use tokio::sync::{OwnedSemaphorePermit, Semaphore};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::ApiError;
pub use job::{validate_camera, CameraRequest, Outputs, RenderJob, RenderRequest, RenderedImages};
pub use store::{scene_id, SceneStore, SceneSummary};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub max_concurrent_renders: usize,
    /// Requests allowed to wait for a render slot before 503.
    pub max_queued_renders: usize,
    pub max_upload_bytes: usize,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
    pub render_cache_entries: usize,
    /// Reserved for forwarding renders to an external refinement service.
    /// Not used yet.
    pub panogen_webhook: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            data_dir: PathBuf::from("data"),
            max_concurrent_renders: 4,
            max_queued_renders: 32,
            max_upload_bytes: 512 * 1024 * 1024,
            cors_origins: Vec::new(),
            render_cache_entries: 64,
            panogen_webhook: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_png_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color_png_b64: Option<String>,
    pub render_ms: f64,
    pub config_echo: RenderSidecar,
}

/// Bounded render admission: `slots` renders at once, `queue` more waiting.
struct RenderLimiter {
    slots: Arc<Semaphore>,
    in_flight: Arc<AtomicUsize>,
    capacity: usize,
}

struct Admission {
    _permit: OwnedSemaphorePermit,
    in_flight: Arc<AtomicUsize>,
}

impl Drop for Admission {
    fn drop(&mut self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl RenderLimiter {
    fn new(slots: usize, queue: usize) -> Self {
        let slots = slots.max(1);
        Self {
            slots: Arc::new(Semaphore::new(slots)),
            in_flight: Arc::new(AtomicUsize::new(0)),
            capacity: slots + queue,
        }
    }

    async fn admit(&self) -> Result<Admission, ApiError> {
        if self.in_flight.fetch_add(1, Ordering::SeqCst) >= self.capacity {
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            return Err(ApiError::Busy);
        }
        let in_flight = self.in_flight.clone();
        match self.slots.clone().acquire_owned().await {
            Ok(permit) => Ok(Admission {
                _permit: permit,
                in_flight,
            }),
            Err(_) => {
                in_flight.fetch_sub(1, Ordering::SeqCst);
                Err(ApiError::Busy)
            }
        }
    }
}

/// Small FIFO-evicting cache of finished renders.
struct RenderCache {
    entries: HashMap<String, Arc<RenderResponse>>,
    order: VecDeque<String>,
    capacity: usize,
}

impl RenderCache {
    fn get(&self, key: &str) -> Option<Arc<RenderResponse>> {
        self.entries.get(key).cloned()
    }

    fn put(&mut self, key: String, value: Arc<RenderResponse>) {
        if self.capacity == 0 || self.entries.contains_key(&key) {
            return;
        }
        while self.entries.len() >= self.capacity {
            match self.order.pop_front() {
                Some(old) => {
                    self.entries.remove(&old);
                }
                None => break,
            }
        }
        self.order.push_back(key.clone());
        self.entries.insert(key, value);
    }
}

pub struct AppState {
    store: SceneStore,
    limiter: RenderLimiter,
    cache: Mutex<RenderCache>,
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> std::io::Result<Self> {
        if config.panogen_webhook.is_some() {
            log::warn!("panogen webhook is configured but not implemented; ignoring");
        }
        Ok(Self {
            store: SceneStore::open(&config.data_dir)?,
            limiter: RenderLimiter::new(config.max_concurrent_renders, config.max_queued_renders),
            cache: Mutex::new(RenderCache {
                entries: HashMap::new(),
                order: VecDeque::new(),
                capacity: config.render_cache_entries,
            }),
        })
    }

    pub fn store(&self) -> &SceneStore {
        &self.store
    }
}

/// Builds the router over an existing state.
pub fn router(state: Arc<AppState>, config: &ServiceConfig) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/scenes", get(list_scenes).post(upload_scene))
        .route("/scenes/{id}", get(get_scene))
        .route("/scenes/{id}/topdown.png", get(get_topdown))
        .route("/scenes/{id}/render", post(render_scene))
        .layer(DefaultBodyLimit::max(config.max_upload_bytes))
        .layer(cors_layer(&config.cors_origins))
        .with_state(state)
}

/// Opens the store under `config.data_dir` and builds the router.
pub fn app(config: &ServiceConfig) -> std::io::Result<Router> {
    Ok(router(Arc::new(AppState::new(config)?), config))
}

pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let app = app(&config)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

fn cors_layer(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins
        .iter()
        .filter_map(|o| match HeaderValue::from_str(o) {
            Ok(v) => Some(v),
            Err(_) => {
                log::warn!("ignoring invalid CORS origin {o:?}");
                None
            }
        })
        .collect();
    layer.allow_origin(AllowOrigin::list(list))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": VERSION }))
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Json<Vec<SceneSummary>> {
    Json(state.store.list())
}

async fn get_scene(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SceneSummary>, ApiError> {
    let scene = state.store.get(&id).ok_or(ApiError::NotFound(id))?;
    Ok(Json(scene.summary.clone()))
}

async fn get_topdown(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let scene = state.store.get(&id).ok_or(ApiError::NotFound(id))?;
    Ok((
        [(header::CONTENT_TYPE, "image/png")],
        scene.topdown_png.clone(),
    ))
}

async fn upload_scene(
    State(state): State<Arc<AppState>>,
    mut multipart: Multipart,
) -> Result<impl IntoResponse, ApiError> {
    let multipart_err = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::TooLarge
        } else {
            ApiError::BadRequest(e.body_text())
        }
    };
    let (mut topdown, mut grid, mut meta) = (None, None, Vec::new());
    while let Some(field) = multipart.next_field().await.map_err(multipart_err)? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(multipart_err)?;
        match name.as_str() {
            "topdown" => topdown = Some(bytes),
            "grid" => grid = Some(bytes),
            "meta" => meta = bytes.to_vec(),
            other => return Err(ApiError::BadRequest(format!("unexpected field {other:?}"))),
        }
    }
    let topdown = topdown.ok_or_else(|| ApiError::BadRequest("missing topdown part".into()))?;
    let grid = grid.ok_or_else(|| ApiError::BadRequest("missing grid part".into()))?;

    let (scene, grid) = tokio::task::spawn_blocking(move || {
        store::decode_scene(&topdown, &grid, &meta).map(|s| (s, grid))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    let (scene, created) = state.store.insert(scene, &grid).await?;
    let status = if created {
        log::info!("stored scene {}", scene.summary.id);
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(scene.summary.clone())))
}

async fn render_scene(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<RenderRequest>,
) -> Result<Json<RenderResponse>, ApiError> {
    let scene = state.store.get(&id).ok_or_else(|| ApiError::NotFound(id.clone()))?;
    let job = RenderJob::prepare(&req, &scene.grid)?;
    let key = job.cache_key(&id);
    if let Some(hit) = state.cache.lock().unwrap().get(&key) {
        return Ok(Json((*hit).clone()));
    }

    let _admission = state.limiter.admit().await?;
    let response = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let images = job
            .run(&scene.grid, &scene.topdown, default_workers())
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let b64 = |png: Vec<u8>| base64::engine::general_purpose::STANDARD.encode(png);
        Ok::<_, ApiError>(RenderResponse {
            depth_png_b64: images.depth_png.map(b64),
            color_png_b64: images.color_png.map(b64),
            render_ms: start.elapsed().as_secs_f64() * 1000.0,
            config_echo: job.sidecar(&scene.grid),
        })
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;

    let response = Arc::new(response);
    state.cache.lock().unwrap().put(key, response.clone());
    Ok(Json((*response).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn limiter_rejects_beyond_queue() {
        let limiter = RenderLimiter::new(1, 1);
        let first = limiter.admit().await.unwrap();
        // One slot busy; a second request would wait in the queue.
        limiter.in_flight.fetch_add(1, Ordering::SeqCst);
        assert!(matches!(limiter.admit().await, Err(ApiError::Busy)));
        limiter.in_flight.fetch_sub(1, Ordering::SeqCst);
        drop(first);
        assert_eq!(limiter.in_flight.load(Ordering::SeqCst), 0);
        let _again = limiter.admit().await.unwrap();
    }

    #[test]
    fn cache_evicts_oldest() {
        let mut cache = RenderCache {
            entries: HashMap::new(),
            order: VecDeque::new(),
            capacity: 2,
        };
        let resp = |ms| {
            Arc::new(RenderResponse {
                depth_png_b64: None,
                color_png_b64: None,
                render_ms: ms,
                config_echo: RenderSidecar {
                    camera: panoforge::projection::EquirectCamera::new(
                        panoforge::grid::WorldPoint::new(0.0, 0.0, 1.0),
                        4,
                        2,
                    )
                    .unwrap(),
                    sampling: Default::default(),
                    grid_checksum: String::new(),
                    style_prompt: None,
                },
            })
        };
        cache.put("a".into(), resp(1.0));
        cache.put("b".into(), resp(2.0));
        cache.put("c".into(), resp(3.0));
        assert!(cache.get("a").is_none());
        assert_eq!(cache.get("c").unwrap().render_ms, 3.0);
    }
}
