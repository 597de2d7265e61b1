//! HTTP front end for curation runs.
//!
//! | method | path                     | purpose                              |
//! |--------|--------------------------|--------------------------------------|
//! | POST   | `/runs`                  | start a run                          |
//! | GET    | `/runs/{id}`             | status and progress                  |
//! | GET    | `/runs/{id}/batch`       | open annotation batch                |
//! | POST   | `/runs/{id}/labels`      | submit human labels                  |
//! | GET    | `/runs/{id}/curve/{i}`   | reward curve of iteration `i`        |
//! | GET    | `/runs/{id}/metrics`     | one row per finished iteration       |
//! | GET    | `/runs/{id}/probe`       | validation probe result              |
//! | GET    | `/runs/{id}/report`      | final report once the run has ended  |
//!
//! Errors are JSON objects `{code, message, field?}`.

pub mod error;
pub mod runs;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

pub use error::{ApiError, ErrorBody};
pub use runs::{BatchView, CreateRun, CurveView, LabelChoice, MetricsView, Registry, RunView, SubmitLabels};

use prefcurate::annotate::SubmitAck;
use prefcurate::curve::ProbeResult;
use prefcurate::engine::RunReport;

type AppState = Arc<Registry>;
type ApiResult<T> = Result<Json<T>, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text(), None))
}

async fn create_run(
    State(registry): State<AppState>,
    payload: Result<Json<CreateRun>, JsonRejection>,
) -> Result<(StatusCode, Json<RunView>), ApiError> {
    let request = body(payload)?;
    let entry = tokio::task::spawn_blocking(move || registry.create(request))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(entry.view())))
}

async fn get_run(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<RunView> {
    Ok(Json(registry.get(&id)?.view()))
}

async fn get_batch(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<BatchView> {
    Ok(Json(registry.get(&id)?.batch()?))
}

async fn post_labels(
    State(registry): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<SubmitLabels>, JsonRejection>,
) -> ApiResult<SubmitAck> {
    let request = body(payload)?;
    Ok(Json(registry.get(&id)?.submit(&request)?))
}

async fn get_curve(State(registry): State<AppState>, Path((id, iteration)): Path<(String, usize)>) -> ApiResult<CurveView> {
    let entry = registry.get(&id)?;
    let curve = entry
        .curve(iteration)
        .ok_or_else(|| ApiError::not_found(format!("no curve for iteration {iteration}")))?;
    Ok(Json((*curve).clone()))
}

async fn get_metrics(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<MetricsView> {
    Ok(Json(registry.get(&id)?.metrics()))
}

async fn get_probe(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<ProbeResult> {
    registry
        .get(&id)?
        .probe()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("probe has not run"))
}

async fn get_report(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<RunReport> {
    registry
        .get(&id)?
        .report()
        .map(|r| Json((*r).clone()))
        .ok_or_else(|| ApiError::not_found("run has no report yet"))
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/batch", get(get_batch))
        .route("/runs/{id}/labels", post(post_labels))
        .route("/runs/{id}/curve/{iteration}", get(get_curve))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/runs/{id}/probe", get(get_probe))
        .route("/runs/{id}/report", get(get_report))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(registry)
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    addr: SocketAddr,
    registry: Arc<Registry>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    serve_on(listener, registry, shutdown).await
}

pub async fn serve_on(
    listener: TcpListener,
    registry: Arc<Registry>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    let app = router(Arc::clone(&registry));
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    registry.shutdown();
    result
}
