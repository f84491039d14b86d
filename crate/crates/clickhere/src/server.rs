//! HTTP inference service.
//!
//! The model and dataset load in the background after the socket is bound;
//! until then every endpoint answers 503.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clickhere_core::geometry::Viewpoint;
use clickhere_core::model::{Model, ModelConfig};
use clickhere_core::render::Split;
use serde::Serialize;
use tower_http::services::ServeDir;

use crate::dataset::{read_dataset, StoredDataset};
use crate::error::{FieldError, Result};
use crate::pipeline::{check_compatible, parse_split};
use crate::predict::{encode_png, run, PredictRequest, ResolveError};
use crate::checkpoint;

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

pub struct Loaded {
    pub model: Model,
    pub dataset: StoredDataset,
}

pub fn load(checkpoint_path: &Path, dataset_dir: &Path) -> Result<Loaded> {
    let model = checkpoint::load(checkpoint_path)?;
    let dataset = read_dataset(dataset_dir)?;
    check_compatible(&model.config, &dataset.meta)?;
    Ok(Loaded { model, dataset })
}

/// Shared handler state; empty until loading finishes.
#[derive(Clone, Default)]
pub struct AppState {
    loaded: Arc<OnceLock<Arc<Loaded>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ready(loaded: Loaded) -> Self {
        let s = Self::new();
        s.set(loaded);
        s
    }

    /// Publishes the loaded model. Later calls are ignored.
    pub fn set(&self, loaded: Loaded) {
        let _ = self.loaded.set(Arc::new(loaded));
    }

    fn get(&self) -> std::result::Result<Arc<Loaded>, ApiError> {
        self.loaded.get().cloned().ok_or(ApiError::Loading)
    }
}

#[derive(Debug)]
enum ApiError {
    Loading,
    BadRequest(FieldError),
    NotFound(String),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, field, message) = match &self {
            ApiError::Loading => (StatusCode::SERVICE_UNAVAILABLE, None, "model is loading"),
            ApiError::BadRequest(f) => (StatusCode::BAD_REQUEST, Some(f.field.as_str()), f.message.as_str()),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, None, m.as_str()),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, None, m.as_str()),
        };
        let body = ErrorBody {
            error: ErrorDetail { field, message },
        };
        let mut r = (status, Json(body)).into_response();
        if matches!(self, ApiError::Loading) {
            r.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
        }
        r
    }
}

impl From<FieldError> for ApiError {
    fn from(e: FieldError) -> Self {
        ApiError::BadRequest(e)
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/meta", get(meta))
        .route("/api/instances", get(instances))
        .route("/api/instances/{id}/image", get(instance_image))
        .route("/api/predict", post(predict))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn healthz(State(state): State<AppState>) -> std::result::Result<&'static str, ApiError> {
    state.get().map(|_| "ok")
}

#[derive(Serialize)]
struct KeypointInfo<'a> {
    id: usize,
    name: &'a str,
}

#[derive(Serialize)]
struct ObjectInfo<'a> {
    id: usize,
    name: &'a str,
    keypoints: Vec<KeypointInfo<'a>>,
}

#[derive(Serialize)]
struct Meta<'a> {
    variant: &'static str,
    n_bins: usize,
    image_size: usize,
    /// Rows and columns of the weight map.
    attention_grid: [usize; 2],
    parameter_count: usize,
    objects: Vec<ObjectInfo<'a>>,
    model: &'a ModelConfig,
}

async fn meta(State(state): State<AppState>) -> std::result::Result<Response, ApiError> {
    let l = state.get()?;
    let c = &l.model.config;
    let (_, h, w) = c.attention_grid();
    let m = Meta {
        variant: c.variant.name(),
        n_bins: c.n_bins,
        image_size: c.image_size,
        attention_grid: [h, w],
        parameter_count: l.model.parameter_count(),
        objects: c
            .objects
            .iter()
            .enumerate()
            .map(|(id, o)| ObjectInfo {
                id,
                name: &o.name,
                keypoints: o
                    .keypoints
                    .iter()
                    .enumerate()
                    .map(|(id, name)| KeypointInfo { id, name })
                    .collect(),
            })
            .collect(),
        model: c,
    };
    Ok(Json(m).into_response())
}

#[derive(Serialize)]
struct InstanceInfo<'a> {
    id: u64,
    render_id: u64,
    object: usize,
    object_name: &'a str,
    keypoint: usize,
    keypoint_name: &'a str,
    x: usize,
    y: usize,
    /// Evaluation-only metadata: the true viewpoint, degrees.
    ground_truth: Viewpoint,
}

#[derive(Serialize)]
struct InstancePage<'a> {
    split: &'static str,
    page: usize,
    page_size: usize,
    total: usize,
    instances: Vec<InstanceInfo<'a>>,
}

fn parse_usize(q: &BTreeMap<String, String>, key: &str, default: usize) -> std::result::Result<usize, FieldError> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| FieldError::new(key, format!("`{v}` is not a nonnegative integer"))),
    }
}

async fn instances(
    State(state): State<AppState>,
    Query(q): Query<BTreeMap<String, String>>,
) -> std::result::Result<Response, ApiError> {
    let l = state.get()?;
    if let Some(k) = q.keys().find(|k| !matches!(k.as_str(), "split" | "page" | "page_size")) {
        return Err(FieldError::new(k.as_str(), "unknown query parameter").into());
    }
    let split = match q.get("split") {
        None => Split::Test,
        Some(s) => parse_split(s).ok_or_else(|| FieldError::new("split", format!("unknown split `{s}`")))?,
    };
    let page = parse_usize(&q, "page", 0)?;
    let page_size = parse_usize(&q, "page_size", DEFAULT_PAGE_SIZE)?;
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(FieldError::new("page_size", format!("must be in [1, {MAX_PAGE_SIZE}]")).into());
    }
    let ds = &l.dataset.dataset;
    let all: Vec<_> = ds.instances.iter().filter(|i| i.split == split).collect();
    let items = all
        .iter()
        .skip(page.saturating_mul(page_size))
        .take(page_size)
        .map(|i| InstanceInfo {
            id: i.id,
            render_id: i.render_id,
            object: i.object,
            object_name: &ds.object_names[i.object],
            keypoint: i.keypoint,
            keypoint_name: &ds.keypoint_names[i.object][i.keypoint],
            x: i.x,
            y: i.y,
            ground_truth: i.viewpoint,
        })
        .collect();
    Ok(Json(InstancePage {
        split: split.name(),
        page,
        page_size,
        total: all.len(),
        instances: items,
    })
    .into_response())
}

async fn instance_image(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> std::result::Result<Response, ApiError> {
    let l = state.get()?;
    let id: u64 = id
        .parse()
        .map_err(|_| FieldError::new("id", format!("`{id}` is not an instance id")))?;
    let inst = l
        .dataset
        .instance(id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown instance {id}")))?;
    let png = encode_png(&inst.image);
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(png)).into_response())
}

async fn predict(State(state): State<AppState>, body: Bytes) -> std::result::Result<Response, ApiError> {
    let start = Instant::now();
    let l = state.get()?;
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let req: PredictRequest = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." || path == "?" { "body".to_string() } else { path };
        FieldError::new(field, e.inner().to_string())
    })?;
    let resp = tokio::task::spawn_blocking(move || run(&l.model, Some(&l.dataset), &req))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| match e {
            ResolveError::Field(f) => ApiError::BadRequest(f),
            ResolveError::UnknownInstance(id) => ApiError::NotFound(format!("unknown instance {id}")),
        })?;
    let mut r = Json(resp).into_response();
    let ms = format!("{:.3}", start.elapsed().as_secs_f64() * 1e3);
    r.headers_mut()
        .insert("x-latency-ms", HeaderValue::from_str(&ms).expect("ascii"));
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub addr: SocketAddr,
    pub static_dir: Option<PathBuf>,
}

/// Binds, loads in the background and serves until Ctrl-C. A failed load
/// stops the service with that error.
pub async fn serve(opts: ServeOptions, on_bound: impl FnOnce(SocketAddr)) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(opts.addr)
        .await
        .map_err(|source| crate::error::Error::Io {
            path: PathBuf::from(opts.addr.to_string()),
            source,
        })?;
    let local = listener.local_addr().map_err(|source| crate::error::Error::Io {
        path: PathBuf::from(opts.addr.to_string()),
        source,
    })?;
    on_bound(local);
    let state = AppState::new();
    let app = router(state.clone(), opts.static_dir.clone());
    let (ckpt, data) = (opts.checkpoint.clone(), opts.dataset.clone());
    let loader = tokio::task::spawn_blocking(move || load(&ckpt, &data));
    let (fail_tx, fail_rx) = tokio::sync::oneshot::channel();
    tokio::spawn(async move {
        match loader.await {
            Ok(Ok(l)) => state.set(l),
            Ok(Err(e)) => {
                let _ = fail_tx.send(e);
            }
            Err(e) => {
                let _ = fail_tx.send(crate::error::Error::Mismatch(format!("loader panicked: {e}")));
            }
        }
    });
    let failure = Arc::new(std::sync::Mutex::new(None));
    let slot = failure.clone();
    let shutdown = async move {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            r = fail_rx => {
                if let Ok(e) = r {
                    *slot.lock().expect("unpoisoned") = Some(e);
                } else {
                    std::future::pending::<()>().await;
                }
            }
        }
    };
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|source| crate::error::Error::Io {
            path: PathBuf::from(local.to_string()),
            source,
        })?;
    let failure = failure.lock().expect("unpoisoned").take();
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
