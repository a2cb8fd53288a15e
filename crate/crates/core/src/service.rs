//! Local HTTP service exposing refocus operations to the viewer.

use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::imageio::{encode_gray16, encode_rgb16};
use crate::refocus::{RefocusTargets, RenderOptions, Renderer, TargetSpec};
use crate::representation::Representation;

/// Renders kept per service.
pub const CACHE_CAPACITY: usize = 16;

const PNG: &str = "image/png";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Info {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
    pub dual_count: usize,
    pub bokeh_count: usize,
}

pub struct Service {
    renderer: Renderer<'static>,
    cache: Mutex<LruCache<RefocusTargets, Arc<Vec<u8>>>>,
    render_slot: Semaphore,
    static_dir: Option<PathBuf>,
    hits: AtomicUsize,
}

impl Service {
    pub fn new(rep: Representation, static_dir: Option<PathBuf>) -> Self {
        Self {
            renderer: Renderer::owned(rep),
            cache: Mutex::new(LruCache::new(NonZeroUsize::new(CACHE_CAPACITY).unwrap())),
            render_slot: Semaphore::new(1),
            static_dir,
            hits: AtomicUsize::new(0),
        }
    }

    pub fn open(container: &Path, static_dir: Option<PathBuf>) -> Result<Self> {
        Ok(Self::new(Representation::deserialize(container)?, static_dir))
    }

    pub fn representation(&self) -> &Representation {
        self.renderer.representation()
    }

    pub fn info(&self) -> Info {
        let rep = self.representation();
        Info {
            k: rep.k,
            width: rep.width,
            height: rep.height,
            labels: rep.labels(),
            dual_count: rep.dual_count(),
            bokeh_count: rep.bokeh_count(),
        }
    }

    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// PNG bytes for `spec` and whether they came from the cache.
    pub fn refocus(&self, spec: &TargetSpec) -> Result<(Arc<Vec<u8>>, bool)> {
        let rep = self.representation();
        let targets = spec.resolve(&rep.focus.labels, rep.k)?;
        if let Some(bytes) = self.cache.lock().unwrap().get(&targets) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((bytes.clone(), true));
        }
        let img = self.renderer.render(&targets, &RenderOptions::default())?;
        let bytes = Arc::new(encode_rgb16(&img)?);
        self.cache.lock().unwrap().put(targets, bytes.clone());
        Ok((bytes, false))
    }

    fn focus_png(&self) -> Result<Vec<u8>> {
        let rep = self.representation();
        encode_gray16(rep.width, rep.height, rep.focus.labels.data())
    }

    fn dual_png(&self) -> Result<Vec<u8>> {
        let rep = self.representation();
        encode_gray16(rep.width, rep.height, rep.dual.labels.data())
    }

    fn bokeh_png(&self) -> Result<Vec<u8>> {
        let rep = self.representation();
        let v: Vec<u16> = rep.bokeh.mask.data().iter().map(|&b| if b { u16::MAX } else { 0 }).collect();
        encode_gray16(rep.width, rep.height, &v)
    }

    fn preview_png(&self) -> Result<Vec<u8>> {
        encode_rgb16(&self.representation().focus.image)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    message: String,
}

fn error_response(status: StatusCode, code: &str, message: String) -> Response {
    (
        status,
        Json(ErrorBody {
            error: code.to_string(),
            message,
        }),
    )
        .into_response()
}

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let status = if self.is_target_error() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        error_response(status, self.code(), self.to_string())
    }
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, PNG)], bytes).into_response()
}

async fn info(State(svc): State<Arc<Service>>) -> Json<Info> {
    Json(svc.info())
}

async fn map_focus(State(svc): State<Arc<Service>>) -> Result<Response> {
    Ok(png(svc.focus_png()?))
}

async fn map_dual(State(svc): State<Arc<Service>>) -> Result<Response> {
    Ok(png(svc.dual_png()?))
}

async fn map_bokeh(State(svc): State<Arc<Service>>) -> Result<Response> {
    Ok(png(svc.bokeh_png()?))
}

async fn preview(State(svc): State<Arc<Service>>) -> Result<Response> {
    Ok(png(svc.preview_png()?))
}

async fn refocus(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let spec: TargetSpec = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "MalformedSpec", e.to_string()),
    };
    if let Some(m) = spec.malformed() {
        return error_response(StatusCode::BAD_REQUEST, "MalformedSpec", m);
    }
    let _permit = svc.render_slot.acquire().await.expect("render slot is never closed");
    let worker = svc.clone();
    let result = tokio::task::spawn_blocking(move || worker.refocus(&spec)).await;
    match result {
        Ok(Ok((bytes, cached))) => (
            [
                (header::CONTENT_TYPE, PNG),
                (header::HeaderName::from_static("x-cache"), if cached { "hit" } else { "miss" }),
            ],
            bytes.as_ref().clone(),
        )
            .into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "RenderPanicked", e.to_string()),
    }
}

const INDEX: &str = "<!doctype html><title>focalstack</title>\
<p>Endpoints: <code>GET /info</code>, <code>GET /map/focus</code>, <code>GET /map/dual</code>, \
<code>GET /map/bokeh</code>, <code>GET /slice/preview</code>, <code>POST /refocus</code>.</p>";

async fn index() -> Html<&'static str> {
    Html(INDEX)
}

pub fn router(svc: Arc<Service>) -> Router {
    let api = Router::new()
        .route("/info", get(info))
        .route("/map/focus", get(map_focus))
        .route("/map/dual", get(map_dual))
        .route("/map/bokeh", get(map_bokeh))
        .route("/slice/preview", get(preview))
        .route("/refocus", post(refocus));
    let api = match &svc.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    };
    api.with_state(svc)
}

pub async fn serve(svc: Arc<Service>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await?;
    Ok(())
}
