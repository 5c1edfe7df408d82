//! `/v1` JSON routes over a [`SessionManager`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use prepline_core::ops::catalog;
use prepline_core::session::{CreateRequest, SessionError, SessionManager};

type Shared = Arc<SessionManager>;

struct ApiError(SessionError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let message = self.0.to_string();
        let kind = message.split(':').next().unwrap_or("Error").to_string();
        let mut body = json!({"error": kind, "message": message});
        if let SessionError::RepairExhausted(attempts) = &self.0 {
            body["attempts"] = json!(attempts);
        }
        (status, Json(body)).into_response()
    }
}

/// Session calls can run whole pipelines, so they go to the blocking pool.
async fn blocking<T, F>(m: Shared, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&SessionManager) -> Result<T, SessionError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&m))
        .await
        .map_err(|e| ApiError(SessionError::Storage(e.to_string())))?
        .map_err(ApiError)
}

async fn create(State(m): State<Shared>, Json(req): Json<CreateRequest>) -> Result<impl IntoResponse, ApiError> {
    let r = blocking(m, move |m| m.create(&req)).await?;
    Ok((StatusCode::CREATED, Json(r)))
}

async fn session(State(m): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(m, move |m| {
        let s = m.get(&id)?;
        let s = s.lock().expect("session lock");
        Ok(Json(json!({
            "session_id": s.meta.id,
            "dataset": s.meta.dataset,
            "label": s.meta.label,
            "backend": s.meta.backend,
            "current": s.versions.current(),
        })))
    })
    .await
}

async fn recommend(State(m): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(m, move |m| Ok(Json(json!(m.recommend(&id)?)))).await
}

#[derive(Deserialize)]
struct ApplyBody {
    prompt: String,
    parent_version: Option<u64>,
}

async fn apply(State(m): State<Shared>, Path(id): Path<String>, Json(b): Json<ApplyBody>) -> Result<Json<Value>, ApiError> {
    blocking(m, move |m| Ok(Json(json!(m.apply(&id, &b.prompt, b.parent_version)?)))).await
}

async fn versions(State(m): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(m, move |m| Ok(Json(json!(m.versions(&id)?)))).await
}

#[derive(Deserialize)]
struct DiffQuery {
    a: u64,
    b: u64,
}

async fn diff(State(m): State<Shared>, Path(id): Path<String>, Query(q): Query<DiffQuery>) -> Result<Json<Value>, ApiError> {
    blocking(m, move |m| Ok(Json(json!(m.diff(&id, q.a, q.b)?)))).await
}

#[derive(Deserialize)]
struct RollbackBody {
    version: u64,
}

async fn rollback(State(m): State<Shared>, Path(id): Path<String>, Json(b): Json<RollbackBody>) -> Result<Json<Value>, ApiError> {
    blocking(m, move |m| Ok(Json(json!(m.rollback(&id, b.version)?)))).await
}

pub fn catalog_json() -> Value {
    let ops: Vec<Value> = catalog()
        .iter()
        .map(|op| {
            let params: Vec<Value> = op
                .params
                .iter()
                .map(|p| {
                    json!({
                        "name": p.name,
                        "kind": format!("{:?}", p.kind),
                        "default": p.default.as_ref().map(|d| d.to_string()),
                        "optional": p.optional,
                    })
                })
                .collect();
            json!({
                "name": op.name,
                "family": op.family.name(),
                "params": params,
                "prompt_template": op.prompt_template,
            })
        })
        .collect();
    json!(ops)
}

async fn catalog_route() -> Json<Value> {
    Json(catalog_json())
}

pub fn router(m: Shared) -> Router {
    Router::new()
        .route("/v1/catalog", get(catalog_route))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(session))
        .route("/v1/sessions/{id}/recommend", post(recommend))
        .route("/v1/sessions/{id}/apply", post(apply))
        .route("/v1/sessions/{id}/versions", get(versions))
        .route("/v1/sessions/{id}/diff", get(diff))
        .route("/v1/sessions/{id}/rollback", post(rollback))
        .layer(CorsLayer::permissive())
        .with_state(m)
}
