//! HTTP/JSON front end for the engine.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `POST /v1/plan` | `PlanRequest` | `PlanResponse` |
//! | `POST /v1/run` | `RunRequest` | `RunResponse` |
//! | `POST /v1/check` | `CheckRequest` | `CheckResponse` |
//! | `POST /v1/gen` | `GenRequest` | `GenResponse` |
//! | `POST /v1/queries` | `OpenSession` | `SessionInfo` |
//! | `GET /v1/queries/{id}` | | `SessionInfo` |
//! | `POST /v1/queries/{id}/edges` | `PushEdges` | `PushResponse` |
//! | `DELETE /v1/queries/{id}` | | `CloseResponse` |
//!
//! Errors come back as `{"error": "..."}` with status 400, 404 or 500.

use std::collections::HashMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use sgq_core::api::{self, ApiError, ErrorBody, Session};
use tokio::net::TcpListener;

/// Request bodies carry whole edge streams.
const BODY_LIMIT: usize = 512 << 20;

#[derive(Default)]
struct AppState {
    sessions: Mutex<HashMap<u64, Slot>>,
    next_id: AtomicU64,
}

type Shared = Arc<AppState>;

/// Emptied on close, so a push racing a close sees the query as gone.
type Slot = Arc<Mutex<Option<Session>>>;

pub struct AppError(StatusCode, String);

impl From<ApiError> for AppError {
    fn from(e: ApiError) -> Self {
        let code = if e.is_client_error() { StatusCode::BAD_REQUEST } else { StatusCode::INTERNAL_SERVER_ERROR };
        AppError(code, e.to_string())
    }
}

impl From<JsonRejection> for AppError {
    fn from(e: JsonRejection) -> Self {
        AppError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        if self.0.is_server_error() {
            log::error!("{}", self.1);
        }
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

type Reply<T> = Result<Json<T>, AppError>;

/// Run engine work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Reply<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(AppError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"))),
    }
}

fn unknown(id: u64) -> AppError {
    AppError(StatusCode::NOT_FOUND, format!("no query with id {id}"))
}

pub fn router() -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/plan", post(plan))
        .route("/v1/run", post(run))
        .route("/v1/check", post(check))
        .route("/v1/gen", post(gen))
        .route("/v1/queries", post(open))
        .route("/v1/queries/{id}", get(status).delete(close))
        .route("/v1/queries/{id}/edges", post(push))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(Shared::default())
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok" })
}

async fn plan(body: Result<Json<api::PlanRequest>, JsonRejection>) -> Reply<api::PlanResponse> {
    let Json(req) = body?;
    blocking(move || api::plan(&req)).await
}

async fn run(body: Result<Json<api::RunRequest>, JsonRejection>) -> Reply<api::RunResponse> {
    let Json(req) = body?;
    blocking(move || api::run(&req)).await
}

async fn check(body: Result<Json<api::CheckRequest>, JsonRejection>) -> Reply<api::CheckResponse> {
    let Json(req) = body?;
    blocking(move || api::check(&req)).await
}

async fn gen(body: Result<Json<api::GenRequest>, JsonRejection>) -> Reply<api::GenResponse> {
    let Json(req) = body?;
    blocking(move || api::generate(&req)).await
}

async fn open(
    State(st): State<Shared>,
    body: Result<Json<api::OpenSession>, JsonRejection>,
) -> Result<(StatusCode, Json<api::SessionInfo>), AppError> {
    let Json(req) = body?;
    let session = Session::open(&req)?;
    let id = st.next_id.fetch_add(1, Ordering::Relaxed) + 1;
    let info = session.info(id);
    st.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(Some(session))));
    log::info!("query {id} registered");
    Ok((StatusCode::CREATED, Json(info)))
}

fn session(st: &AppState, id: u64) -> Result<Slot, AppError> {
    st.sessions.lock().unwrap().get(&id).cloned().ok_or_else(|| unknown(id))
}

async fn status(State(st): State<Shared>, Path(id): Path<u64>) -> Reply<api::SessionInfo> {
    let s = session(&st, id)?;
    let info = s.lock().unwrap().as_ref().map(|s| s.info(id));
    info.map(Json).ok_or_else(|| unknown(id))
}

async fn push(
    State(st): State<Shared>,
    Path(id): Path<u64>,
    body: Result<Json<api::PushEdges>, JsonRejection>,
) -> Reply<api::PushResponse> {
    let Json(req) = body?;
    let s = session(&st, id)?;
    match tokio::task::spawn_blocking(move || s.lock().unwrap().as_mut().map(|s| s.push(&req))).await {
        Ok(Some(r)) => Ok(Json(r?)),
        Ok(None) => Err(unknown(id)),
        Err(e) => Err(AppError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"))),
    }
}

async fn close(State(st): State<Shared>, Path(id): Path<u64>) -> Reply<api::CloseResponse> {
    let s = st.sessions.lock().unwrap().remove(&id).ok_or_else(|| unknown(id))?;
    blocking(move || match s.lock().unwrap().take() {
        Some(s) => s.close(),
        None => Err(ApiError::BadRequest(format!("query {id} already closed"))),
    })
    .await
}

pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    serve_until(listener, std::future::pending()).await
}

pub async fn serve_until(listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on {addr}");
    }
    axum::serve(listener, router()).with_graceful_shutdown(shutdown).await
}
