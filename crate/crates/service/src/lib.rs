//! HTTP API for wound detection.
//!
//! | route                | method    | body                                 |
//! |----------------------|-----------|--------------------------------------|
//! | `/api/health`        | GET       | [`Health`]                           |
//! | `/api/models`        | GET       | list of [`ModelInfo`]                |
//! | `/api/settings`      | GET, PUT  | [`Settings`]                         |
//! | `/api/detect`        | POST      | image in, [`DetectResponse`] out     |
//!
//! `POST /api/detect` takes either a multipart form with one file field or a
//! raw PNG/JPEG body. Query parameters `model`, `conf`, `nms` and `image_id`
//! override the session settings for that request only. Errors are JSON
//! `{"code", "message"}`.

mod error;
mod registry;

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::{to_bytes, Body};
use axum::extract::{DefaultBodyLimit, FromRequest, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::CorsLayer;
use woundscope_core::inference::{
    check_image_id, detect, InferenceError, ModelConfig, DEFAULT_CONF_THRESHOLD,
    DEFAULT_NMS_IOU_THRESHOLD, YOLOV3_416,
};
use woundscope_core::{ClassMap, RasterImage};

pub use error::{ApiError, ErrorBody};
pub use registry::{Registry, SharedBackend};

/// Environment variable holding the optional bearer token.
pub const TOKEN_ENV: &str = "WOUNDSCOPE_TOKEN";

/// Default upload limit.
pub const DEFAULT_MAX_BODY_BYTES: usize = 10 * 1024 * 1024;

/// Process-wide detection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub model: String,
    pub conf_threshold: f64,
    pub nms_iou_threshold: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            model: YOLOV3_416.to_string(),
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_iou_threshold: DEFAULT_NMS_IOU_THRESHOLD,
        }
    }
}

impl Settings {
    fn validate(&self, registry: &Registry) -> Result<(), ApiError> {
        check_unit("conf_threshold", self.conf_threshold)?;
        check_unit("nms_iou_threshold", self.nms_iou_threshold)?;
        if registry.model(&self.model).is_none() {
            return Err(ApiError::unprocessable(
                "unknown_model",
                format!("unknown model {:?}", self.model),
            ));
        }
        Ok(())
    }
}

fn check_unit(name: &str, v: f64) -> Result<(), ApiError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ApiError::unprocessable(
            "out_of_range",
            format!("{name} must be within [0, 1], got {v}"),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// `ok`, or `degraded` when the current model has no backend.
    pub status: String,
    pub backend: Option<String>,
    pub model: String,
    pub uptime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadInfo {
    pub stride: u32,
    pub grid_h: u32,
    pub grid_w: u32,
    pub anchors: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub net_w: u32,
    pub net_h: u32,
    pub num_classes: usize,
    pub heads: Vec<HeadInfo>,
    /// Whether a backend is attached for this model.
    pub available: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOut {
    pub class_name: String,
    pub score: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub image_id: String,
    pub model: String,
    pub elapsed_ms: f64,
    /// Normalized to the submitted image; empty when nothing was found.
    pub detections: Vec<DetectionOut>,
}

/// Static service options.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_body_bytes: usize,
    pub token: Option<String>,
    pub classes: ClassMap,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            token: None,
            classes: ClassMap::wound(),
        }
    }
}

impl ServiceConfig {
    /// Defaults with the token taken from [`TOKEN_ENV`] when set and non-empty.
    pub fn from_env() -> Self {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        ServiceConfig {
            token,
            ..ServiceConfig::default()
        }
    }
}

pub struct AppState {
    config: ServiceConfig,
    registry: Registry,
    // replaced wholesale so readers always see one consistent snapshot
    settings: RwLock<Arc<Settings>>,
    started: Instant,
}

impl AppState {
    pub fn new(
        config: ServiceConfig,
        registry: Registry,
        settings: Settings,
    ) -> Result<Self, ApiError> {
        settings.validate(&registry)?;
        Ok(AppState {
            config,
            registry,
            settings: RwLock::new(Arc::new(settings)),
            started: Instant::now(),
        })
    }

    pub fn settings(&self) -> Arc<Settings> {
        self.settings
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    fn replace_settings(&self, s: Settings) {
        *self.settings.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(s);
    }
}

/// All routes with CORS and optional bearer-token auth applied.
pub fn router(state: Arc<AppState>) -> Router {
    let protected = Router::new()
        .route("/api/models", get(models))
        .route("/api/settings", get(get_settings).put(put_settings))
        .route(
            "/api/detect",
            post(detect_image).layer(DefaultBodyLimit::disable()),
        )
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/api/health", get(health))
        .merge(protected)
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves `app` on `listener` until `shutdown` resolves, then drains
/// in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}

async fn require_token(
    State(st): State<Arc<AppState>>,
    req: Request,
    next: Next,
) -> Result<Response, ApiError> {
    if let Some(token) = &st.config.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return Err(ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token",
            ));
        }
    }
    Ok(next.run(req).await)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn health(State(st): State<Arc<AppState>>) -> Json<Health> {
    let settings = st.settings();
    let backend = st.registry.backend_name(&settings.model);
    Json(Health {
        status: if backend.is_some() { "ok" } else { "degraded" }.to_string(),
        backend,
        model: settings.model.clone(),
        uptime_s: st.started.elapsed().as_secs_f64(),
    })
}

async fn models(State(st): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    let list = st
        .registry
        .models()
        .map(|m| ModelInfo {
            name: m.name.clone(),
            net_w: m.net_w,
            net_h: m.net_h,
            num_classes: m.num_classes,
            heads: m
                .heads
                .iter()
                .map(|h| HeadInfo {
                    stride: h.stride,
                    grid_h: m.net_h / h.stride,
                    grid_w: m.net_w / h.stride,
                    anchors: h.anchors.clone(),
                })
                .collect(),
            available: st.registry.backend(&m.name).is_some(),
        })
        .collect();
    Json(list)
}

async fn get_settings(State(st): State<Arc<AppState>>) -> Json<Settings> {
    Json((*st.settings()).clone())
}

async fn put_settings(
    State(st): State<Arc<AppState>>,
    body: axum::body::Bytes,
) -> Result<Json<Settings>, ApiError> {
    let s: Settings = serde_json::from_slice(&body).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            ApiError::bad_request("bad_json", e.to_string())
        } else {
            ApiError::unprocessable("invalid_settings", e.to_string())
        }
    })?;
    s.validate(&st.registry)?;
    st.replace_settings(s.clone());
    tracing::info!(model = %s.model, conf = s.conf_threshold, nms = s.nms_iou_threshold, "settings updated");
    Ok(Json(s))
}

struct Upload {
    bytes: Vec<u8>,
    file_stem: Option<String>,
}

async fn read_upload(req: Request, limit: usize) -> Result<Upload, ApiError> {
    let (parts, body) = req.into_parts();
    let bytes = to_bytes(body, limit).await.map_err(|_| {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_large",
            format!("request body exceeds {limit} bytes"),
        )
    })?;
    let is_multipart = parts
        .headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        return Ok(Upload {
            bytes: bytes.to_vec(),
            file_stem: None,
        });
    }

    let req = Request::from_parts(parts, Body::from(bytes));
    let mut form = axum::extract::Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request("bad_multipart", e.body_text()))?;
    loop {
        let field = form
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request("bad_multipart", e.body_text()))?;
        let Some(field) = field else {
            return Err(ApiError::bad_request(
                "missing_image",
                "multipart form has no file field",
            ));
        };
        let is_file = field.file_name().is_some() || matches!(field.name(), Some("image" | "file"));
        if !is_file {
            continue;
        }
        let file_stem = field.file_name().and_then(|n| {
            std::path::Path::new(n)
                .file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
        });
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request("bad_multipart", e.body_text()))?;
        return Ok(Upload {
            bytes: bytes.to_vec(),
            file_stem,
        });
    }
}

fn parse_override(q: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, ApiError> {
    let Some(raw) = q.get(key) else {
        return Ok(None);
    };
    let v: f64 = raw.parse().map_err(|_| {
        ApiError::unprocessable("invalid_query", format!("{key} is not a number: {raw:?}"))
    })?;
    check_unit(key, v)?;
    Ok(Some(v))
}

fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

async fn detect_image(
    State(st): State<Arc<AppState>>,
    Query(q): Query<BTreeMap<String, String>>,
    req: Request,
) -> Result<Json<DetectResponse>, ApiError> {
    let started = Instant::now();
    // one snapshot for the whole request
    let settings = st.settings();
    let model_name = q
        .get("model")
        .cloned()
        .unwrap_or_else(|| settings.model.clone());
    let mut cfg: ModelConfig = st.registry.model(&model_name).cloned().ok_or_else(|| {
        ApiError::unprocessable("unknown_model", format!("unknown model {model_name:?}"))
    })?;
    cfg.conf_threshold = parse_override(&q, "conf")?.unwrap_or(settings.conf_threshold);
    cfg.nms_iou_threshold = parse_override(&q, "nms")?.unwrap_or(settings.nms_iou_threshold);
    if let Some(id) = q.get("image_id") {
        check_image_id(id)
            .map_err(|e| ApiError::unprocessable("invalid_image_id", e.to_string()))?;
    }

    let upload = read_upload(req, st.config.max_body_bytes).await?;
    if upload.bytes.is_empty() {
        return Err(ApiError::bad_request("empty_image", "image body is empty"));
    }
    let image_id = q
        .get("image_id")
        .cloned()
        .or(upload.file_stem.filter(|s| check_image_id(s).is_ok()))
        .unwrap_or_else(|| content_id(&upload.bytes));

    let backend = st.registry.backend(&model_name).cloned();
    let id = image_id.clone();
    let model = model_name.clone();
    let dets = tokio::task::spawn_blocking(move || {
        let img = RasterImage::decode(&upload.bytes)
            .map_err(|e| ApiError::bad_request("undecodable_image", e.to_string()))?;
        let backend = backend.ok_or_else(|| {
            ApiError::unavailable(
                "backend_unavailable",
                format!("no backend for model {model:?}"),
            )
        })?;
        let mut guard = backend.lock().unwrap_or_else(|p| p.into_inner());
        detect(&img, &id, guard.as_mut(), &cfg).map_err(|e| match e {
            InferenceError::UnknownImage { .. }
            | InferenceError::Backend { .. }
            | InferenceError::Io { .. } => ApiError::unavailable("backend_error", e.to_string()),
            other => ApiError::internal(other.to_string()),
        })
    })
    .await
    .map_err(|e| ApiError::internal(format!("detect task failed: {e}")))??;

    let classes = &st.config.classes;
    let detections = dets
        .iter()
        .map(|d| DetectionOut {
            class_name: classes
                .name_of(d.class_id)
                .map_or_else(|| format!("class{}", d.class_id), str::to_string),
            score: d.score,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
        })
        .collect();
    let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
    tracing::debug!(%image_id, model = %model_name, elapsed_ms, "detect");
    Ok(Json(DetectResponse {
        image_id,
        model: model_name,
        elapsed_ms,
        detections,
    }))
}
