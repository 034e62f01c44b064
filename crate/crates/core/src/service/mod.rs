//! HTTP/JSON API for configuration and monitoring.
//!
//! Handlers never touch engine state: they talk to the engine loop through
//! an [`EngineHandle`]. Every mutating request validates completely before
//! writing anything, so a rejected request changes neither disk nor engine.

mod schema;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::sync::{broadcast, Mutex};

use crate::config::{validate_config, EngineConfig};
use crate::engine::runtime::EngineHandle;
use crate::engine::session_files;
use crate::mdrnn::{load_weights, weights_from_bytes, MdrnnParams};
use crate::Error;

pub use schema::api_schema;

const MAX_MODEL_BYTES: usize = 64 << 20;

#[derive(Clone)]
pub struct AppState {
    pub handle: EngineHandle,
    /// Config file that successful PUTs are persisted to.
    pub config_path: PathBuf,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
    pub feed: broadcast::Sender<String>,
    /// Built web UI assets, if any.
    pub static_dir: Option<PathBuf>,
    /// Serializes mutating requests so validate-then-write is atomic.
    pub write_lock: Arc<Mutex<()>>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<String>,
}

fn error(status: StatusCode, msg: impl Into<String>, violations: Vec<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into(), violations })).into_response()
}

fn engine_gone() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "engine is not running", vec![])
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/config", get(get_config).put(put_config))
        .route("/api/logs", get(list_logs))
        .route("/api/logs/{session}", get(get_log))
        .route("/api/model", axum::routing::post(post_model))
        .route("/api/schema", get(|| async { Json(api_schema()) }))
        .route("/api/feed", get(feed))
        .fallback(get(static_asset))
        .layer(DefaultBodyLimit::max(MAX_MODEL_BYTES))
        .with_state(state)
}

/// Bind and serve until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    bind: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn status(State(st): State<AppState>) -> Response {
    match st.handle.status().await {
        Some(s) => Json(s).into_response(),
        None => engine_gone(),
    }
}

async fn get_config(State(st): State<AppState>) -> Response {
    match st.handle.config().await {
        Some(c) => Json(c).into_response(),
        None => engine_gone(),
    }
}

/// Write `bytes` to `path` via a temporary file in the same directory and
/// a rename, so readers see either the old or the new content.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Load the model `config` names, checking it fits the config.
fn load_model_for(config: &EngineConfig, base: &Path) -> Result<MdrnnParams, Error> {
    let path = config.model_path(base);
    let params = load_weights(&path)?;
    if params.shape.dimension != config.dimension {
        return Err(Error::DimensionMismatch { expected: config.dimension, found: params.shape.dimension });
    }
    Ok(params)
}

async fn put_config(State(st): State<AppState>, body: Bytes) -> Response {
    let raw: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid config", vec![format!("malformed JSON: {e}")]),
    };
    let new = match validate_config(&raw) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid config", e.violations),
    };
    let _guard = st.write_lock.lock().await;
    let Some(current) = st.handle.config().await else { return engine_gone() };
    let reload = new.model_file != current.model_file || new.dimension != current.dimension;
    let model = if reload {
        let path = new.model_path(&st.base_dir);
        if !path.exists() {
            return error(StatusCode::CONFLICT, format!("model file not found: {}", path.display()), vec![]);
        }
        match load_model_for(&new, &st.base_dir) {
            Ok(m) => Some(m),
            Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string(), vec![]),
        }
    } else {
        None
    };
    let text = new.to_json_pretty() + "\n";
    if let Err(e) = write_atomic(&st.config_path, text.as_bytes()) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("persisting config: {e}"), vec![]);
    }
    let applied = match model {
        Some(m) => {
            let name = new.model_file.display().to_string();
            st.handle.swap_model(Arc::new(m), name, new.clone()).await
        }
        None => st.handle.apply_config(new.clone()).await,
    };
    if !applied {
        return engine_gone();
    }
    Json(new).into_response()
}

#[derive(Debug, Serialize)]
struct SessionInfo {
    name: String,
    size: u64,
}

async fn log_dir(st: &AppState) -> Option<PathBuf> {
    st.handle.config().await.map(|c| c.log_path(&st.base_dir))
}

async fn list_logs(State(st): State<AppState>) -> Response {
    let Some(dir) = log_dir(&st).await else { return engine_gone() };
    let files = if dir.exists() { session_files(&dir).unwrap_or_default() } else { Vec::new() };
    let sessions: Vec<SessionInfo> = files
        .iter()
        .filter_map(|p| {
            let size = std::fs::metadata(p).ok()?.len();
            Some(SessionInfo { name: p.file_name()?.to_string_lossy().into_owned(), size })
        })
        .collect();
    Json(sessions).into_response()
}

async fn get_log(State(st): State<AppState>, UrlPath(session): UrlPath<String>) -> Response {
    let Some(dir) = log_dir(&st).await else { return engine_gone() };
    let want = if session.ends_with(".csv") { session.clone() } else { format!("{session}.csv") };
    // only names from the listing are served, never arbitrary paths
    let found = session_files(&dir)
        .unwrap_or_default()
        .into_iter()
        .find(|p| p.file_name().is_some_and(|n| n.to_string_lossy() == want));
    let Some(path) = found else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {session:?}"), vec![]);
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), vec![]),
    }
}

fn upload_name(file_name: Option<&str>) -> String {
    let name = file_name
        .and_then(|n| Path::new(n).file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.starts_with('.') && !n.is_empty());
    name.unwrap_or_else(|| "uploaded.mdrn".to_string())
}

async fn post_model(State(st): State<AppState>, mut multipart: Multipart) -> Response {
    let mut upload = None;
    loop {
        match multipart.next_field().await {
            Ok(Some(field)) => {
                let name = upload_name(field.file_name());
                match field.bytes().await {
                    Ok(b) => {
                        upload = Some((name, b));
                        break;
                    }
                    Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), vec![]),
                }
            }
            Ok(None) => break,
            Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), vec![]),
        }
    }
    let Some((name, bytes)) = upload else {
        return error(StatusCode::BAD_REQUEST, "no file in upload", vec![]);
    };
    let params = match weights_from_bytes(&bytes) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string(), vec![]),
    };
    let _guard = st.write_lock.lock().await;
    let Some(current) = st.handle.config().await else { return engine_gone() };
    if params.shape.dimension != current.dimension {
        let e = Error::DimensionMismatch { expected: current.dimension, found: params.shape.dimension };
        return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string(), vec![]);
    }
    let model_dir = current
        .model_path(&st.base_dir)
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| st.base_dir.clone());
    let target = model_dir.join(&name);
    let mut new = current.clone();
    new.model_file = match current.model_file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(&name),
        _ => PathBuf::from(&name),
    };
    if let Err(e) = write_atomic(&target, &bytes) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("saving model: {e}"), vec![]);
    }
    if let Err(e) = write_atomic(&st.config_path, (new.to_json_pretty() + "\n").as_bytes()) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("persisting config: {e}"), vec![]);
    }
    let shape = params.shape;
    if !st.handle.swap_model(Arc::new(params), new.model_file.display().to_string(), new.clone()).await {
        return engine_gone();
    }
    Json(json!({ "model_file": new.model_file, "shape": shape })).into_response()
}

async fn feed(State(st): State<AppState>, ws: WebSocketUpgrade) -> Response {
    let rx = st.feed.subscribe();
    ws.on_upgrade(move |socket| pump_feed(socket, rx))
}

async fn pump_feed(mut socket: WebSocket, mut rx: broadcast::Receiver<String>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                // a client that cannot keep up is dropped
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::info!("feed client lagged by {n} messages, disconnecting");
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

const FALLBACK_PAGE: &str = "<!doctype html><title>impsy</title><p>Web UI not built. The API is under <code>/api</code>.</p>";

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

async fn static_asset(State(st): State<AppState>, uri: Uri) -> Response {
    let rel = uri.path().trim_start_matches('/');
    if rel.starts_with("api/") {
        return error(StatusCode::NOT_FOUND, "no such endpoint", vec![]);
    }
    let Some(root) = &st.static_dir else {
        return if rel.is_empty() {
            ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], FALLBACK_PAGE).into_response()
        } else {
            StatusCode::NOT_FOUND.into_response()
        };
    };
    let rel = Path::new(if rel.is_empty() { "index.html" } else { rel });
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let path = root.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upload_names_are_sanitized() {
        assert_eq!(upload_name(Some("../../etc/passwd")), "passwd");
        assert_eq!(upload_name(Some("/abs/model.mdrn")), "model.mdrn");
        assert_eq!(upload_name(Some(".hidden")), "uploaded.mdrn");
        assert_eq!(upload_name(None), "uploaded.mdrn");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
