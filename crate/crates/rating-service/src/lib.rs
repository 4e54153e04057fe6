//! HTTP API for subjective scoring sessions.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | `{observer_id, image_set, shuffle_seed, metadata}` |
//! | GET | `/sessions/{id}` | session state |
//! | GET | `/sessions/{id}/next` | current image, progress, score history |
//! | POST | `/sessions/{id}/ratings` | `{image_id, score?, discrete_label?, client_timestamp?}` |
//! | POST | `/sessions/{id}/withdraw` | keeps ratings submitted so far |
//! | GET | `/export/{set}.csv` | `image_id,observer_id,score,timestamp` |
//! | GET | `/images/{id}` | image bytes |
//!
//! JSON bodies carry `schema_version`.

pub mod store;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use store::{acr_score, NewSession, NextItem, Session, Status, Store, Submission, ACR_SCORES};

pub const SCHEMA_VERSION: u32 = 1;
pub const HISTORY_WINDOW: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown image set {0}")]
    UnknownSet(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("session is {0:?}")]
    Inactive(Status),
    #[error("expected a rating for {expected}, got {got}")]
    OutOfOrder { expected: String, got: String },
    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error("{0} already rated by this observer")]
    Duplicate(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("{0}")]
    Io(String),
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            Self::UnknownSet(_) | Self::UnknownSession(_) | Self::UnknownImage(_) => StatusCode::NOT_FOUND,
            Self::Inactive(_) | Self::OutOfOrder { .. } | Self::Duplicate(_) => StatusCode::CONFLICT,
            Self::InvalidScore(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Config(_) | Self::Corrupt(_) | Self::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            Self::UnknownSet(_) => "unknown_set",
            Self::UnknownSession(_) => "unknown_session",
            Self::UnknownImage(_) => "unknown_image",
            Self::Inactive(Status::Completed) => "completed",
            Self::Inactive(_) => "inactive",
            Self::OutOfOrder { .. } => "out_of_order",
            Self::InvalidScore(_) => "invalid_score",
            Self::Duplicate(_) => "duplicate",
            Self::BadRequest(_) => "bad_request",
            Self::Config(_) | Self::Corrupt(_) | Self::Io(_) => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({ "schema_version": SCHEMA_VERSION, "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetConfig {
    pub id: String,
    pub dir: PathBuf,
}

/// ```toml
/// data_dir = "ratings"
/// [[sets]]
/// id = "main"
/// dir = "images"
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub history_window: usize,
    /// Events between snapshots; 0 disables them.
    pub snapshot_every: u64,
    pub sets: Vec<SetConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("ratings"), history_window: HISTORY_WINDOW, snapshot_every: 100, sets: vec![] }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
        let mut c: Self = toml::from_str(&text).map_err(|e| ServiceError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if c.data_dir.is_relative() {
            c.data_dir = base.join(&c.data_dir);
        }
        for s in &mut c.sets {
            if s.dir.is_relative() {
                s.dir = base.join(&s.dir);
            }
        }
        Ok(c)
    }
}

/// JSON body whose parse failures answer in the API's error format.
struct Body<T>(T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> axum::extract::FromRequest<S> for Body<T> {
    type Rejection = ServiceError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state).await.map(|Json(v)| Body(v)).map_err(|e| ServiceError::BadRequest(e.body_text()))
    }
}

pub type Shared = Arc<Mutex<Store>>;

fn lock(s: &Shared) -> std::sync::MutexGuard<'_, Store> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

fn ok(status: StatusCode, mut body: serde_json::Value) -> Response {
    body["schema_version"] = json!(SCHEMA_VERSION);
    (status, Json(body)).into_response()
}

async fn create_session(State(s): State<Shared>, Body(req): Body<NewSession>) -> Result<Response, ServiceError> {
    let session = lock(&s).create_session(req)?;
    Ok(ok(StatusCode::CREATED, json!({ "session": session })))
}

async fn get_session(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let session = lock(&s).session(&id)?.clone();
    Ok(ok(StatusCode::OK, json!({ "session": session })))
}

async fn next_item(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let item = lock(&s).next_item(&id)?;
    let url = format!("/images/{}", item.image_id);
    Ok(ok(
        StatusCode::OK,
        json!({
            "image_id": item.image_id,
            "image_url": url,
            "progress": { "done": item.position, "total": item.total },
            "history": item.history,
        }),
    ))
}

async fn submit(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Body(sub): Body<Submission>,
) -> Result<Response, ServiceError> {
    let session = lock(&s).submit(&id, sub)?;
    Ok(ok(
        StatusCode::OK,
        json!({ "accepted": true, "cursor": session.cursor, "remaining": session.queue.len() - session.cursor, "status": session.status }),
    ))
}

async fn withdraw(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let session = lock(&s).withdraw(&id)?;
    Ok(ok(StatusCode::OK, json!({ "session": session })))
}

async fn export(State(s): State<Shared>, UrlPath(file): UrlPath<String>) -> Result<Response, ServiceError> {
    let set = file.strip_suffix(".csv").ok_or_else(|| ServiceError::UnknownSet(file.clone()))?;
    let rows = lock(&s).export(set)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], store::ratings_csv(&rows)).into_response())
}

async fn image(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let path = lock(&s).image_path(&id).map(Path::to_path_buf).ok_or_else(|| ServiceError::UnknownImage(id.clone()))?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        _ => "image/x-portable-anymap",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/ratings", post(submit))
        .route("/sessions/{id}/withdraw", post(withdraw))
        .route("/export/{file}", get(export))
        .route("/images/{id}", get(image))
        .with_state(store)
}

pub fn open(cfg: &ServiceConfig) -> Result<Shared, ServiceError> {
    Ok(Arc::new(Mutex::new(Store::open(cfg)?)))
}

/// Serves until the process is stopped.
pub async fn serve(cfg: &ServiceConfig, addr: &str) -> Result<(), ServiceError> {
    let app = router(open(cfg)?);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServiceError::Io(format!("{addr}: {e}")))?;
    axum::serve(listener, app).await.map_err(|e| ServiceError::Io(e.to_string()))
}
