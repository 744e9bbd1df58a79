//! JSON HTTP API over a shared [`Snapshot`].
//!
//! Model evaluation runs on the blocking pool; the snapshot is immutable, so
//! concurrent requests need no locking.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::service::{parse_head, PlanRequest, Snapshot};

pub const DEFAULT_TAU: f64 = 1.0;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    reason: String,
}

pub struct ApiError(CliError);

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, field, reason) = match self.0 {
            CliError::NotFound(r) => (StatusCode::NOT_FOUND, "not_found", None, r),
            CliError::Invalid { field, reason } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid", Some(field), reason),
            CliError::Gate(r) => (StatusCode::UNPROCESSABLE_ENTITY, "gate", None, r),
            other => {
                log::error!("request failed: {other}");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal", None, other.to_string())
            }
        };
        let body = ErrorBody {
            error: kind,
            field,
            reason,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(snap: Arc<Snapshot>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Snapshot) -> crate::error::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&snap))
        .await
        .map_err(|e| ApiError(CliError::Io(std::io::Error::other(e.to_string()))))?
        .map(Json)
        .map_err(ApiError)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryQuery {
    pub pid: String,
    pub hours: Option<f64>,
    pub end: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastBody {
    pub pid: String,
    pub anchor: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualBody {
    pub pid: String,
    pub anchor: Option<String>,
    pub plan: PlanRequest,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionQuery {
    pub pid: String,
    pub anchor: Option<String>,
    pub layer: Option<usize>,
    pub head: Option<String>,
    pub window: Option<usize>,
    pub tau: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceQuery {
    pub pid: String,
    pub anchor: Option<String>,
}

pub fn router(snap: Arc<Snapshot>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/participants", get(participants))
        .route("/history", get(history))
        .route("/forecast", post(forecast))
        .route("/counterfactual", post(counterfactual))
        .route("/attribution", get(attribution))
        .route("/importance", get(importance))
        .route("/openapi.json", get(|| async { Json(openapi()) }))
        .with_state(snap)
}

async fn health(State(s): State<Arc<Snapshot>>) -> Json<Value> {
    Json(json!({ "status": "ok", "checkpoint": s.checkpoint, "participants": s.prep.profiles.len() }))
}

async fn participants(State(s): State<Arc<Snapshot>>) -> ApiResult<Vec<crate::service::ParticipantView>> {
    blocking(s, |s| Ok(s.participants())).await
}

async fn history(State(s): State<Arc<Snapshot>>, Query(q): Query<HistoryQuery>) -> ApiResult<crate::service::HistoryView> {
    blocking(s, move |s| s.history(&q.pid, q.hours, q.end.as_deref())).await
}

async fn forecast(State(s): State<Arc<Snapshot>>, Json(b): Json<ForecastBody>) -> ApiResult<crate::service::ForecastView> {
    blocking(s, move |s| s.forecast(&b.pid, b.anchor.as_deref())).await
}

async fn counterfactual(
    State(s): State<Arc<Snapshot>>,
    Json(b): Json<CounterfactualBody>,
) -> ApiResult<crate::service::CounterfactualView> {
    blocking(s, move |s| s.counterfactual(&b.pid, b.anchor.as_deref(), &b.plan)).await
}

async fn attribution(
    State(s): State<Arc<Snapshot>>,
    Query(q): Query<AttributionQuery>,
) -> ApiResult<crate::service::AttributionView> {
    blocking(s, move |s| {
        let head = parse_head(q.head.as_deref().unwrap_or("aggregate"))?;
        s.attribution(&q.pid, q.anchor.as_deref(), q.layer, head, q.window, q.tau.unwrap_or(DEFAULT_TAU))
    })
    .await
}

async fn importance(State(s): State<Arc<Snapshot>>, Query(q): Query<ImportanceQuery>) -> ApiResult<crate::service::ImportanceView> {
    blocking(s, move |s| s.importance(&q.pid, q.anchor.as_deref())).await
}

fn param(name: &str, ty: &str, required: bool, desc: &str) -> Value {
    json!({ "name": name, "in": "query", "required": required, "schema": { "type": ty }, "description": desc })
}

fn responses(ok: &str) -> Value {
    json!({
        "200": { "description": ok },
        "404": { "description": "Unknown participant", "content": { "application/json": { "schema": { "$ref": "#/components/schemas/Error" } } } },
        "422": { "description": "Invalid field or plausibility gate", "content": { "application/json": { "schema": { "$ref": "#/components/schemas/Error" } } } }
    })
}

/// OpenAPI 3 description of [`router`].
pub fn openapi() -> Value {
    let pid = param("pid", "string", true, "Participant id");
    let anchor = param("anchor", "string", false, "RFC 3339 UTC time of the last observed step; defaults to the latest usable anchor");
    json!({
        "openapi": "3.0.3",
        "info": { "title": "cgm forecasting service", "version": env!("CARGO_PKG_VERSION") },
        "paths": {
            "/health": { "get": { "summary": "Liveness and loaded checkpoint", "responses": { "200": { "description": "ok" } } } },
            "/participants": { "get": { "summary": "Participants with their record span", "responses": { "200": { "description": "List of participants" } } } },
            "/history": { "get": {
                "summary": "Recorded channels over a trailing span",
                "parameters": [pid, param("hours", "number", false, "Span in hours, default 24"), param("end", "string", false, "Last time included")],
                "responses": responses("Channel series")
            } },
            "/forecast": { "post": {
                "summary": "Quantile forecast at an anchor",
                "requestBody": { "required": true, "content": { "application/json": { "schema": { "$ref": "#/components/schemas/ForecastRequest" } } } },
                "responses": responses("Forecast")
            } },
            "/counterfactual": { "post": {
                "summary": "Factual and counterfactual forecasts under a covariate plan",
                "requestBody": { "required": true, "content": { "application/json": { "schema": { "$ref": "#/components/schemas/CounterfactualRequest" } } } },
                "responses": responses("Both forecasts and the median effect")
            } },
            "/attribution": { "get": {
                "summary": "Lag attention map of one layer",
                "parameters": [pid, anchor, param("layer", "integer", false, "Layer index, default last"),
                    param("head", "string", false, "Head index or 'aggregate' (default)"),
                    param("window", "integer", false, "Trailing window length"),
                    param("tau", "number", false, "Softmax temperature, default 1")],
                "responses": responses("Lower-triangular rows that each sum to 1")
            } },
            "/importance": { "get": {
                "summary": "Variable selection weights",
                "parameters": [pid, anchor],
                "responses": responses("Mean weight per variable and scope")
            } },
            "/openapi.json": { "get": { "summary": "This document", "responses": { "200": { "description": "OpenAPI document" } } } }
        },
        "components": { "schemas": {
            "Error": { "type": "object", "required": ["error", "reason"], "properties": {
                "error": { "type": "string", "enum": ["not_found", "invalid", "gate", "internal"] },
                "field": { "type": "string" },
                "reason": { "type": "string" }
            } },
            "ForecastRequest": { "type": "object", "required": ["pid"], "properties": {
                "pid": { "type": "string" }, "anchor": { "type": "string" }
            } },
            "Plan": { "type": "object", "required": ["channel"], "properties": {
                "channel": { "type": "string", "description": "Decoder covariate, e.g. hr, rr, steps, stress" },
                "values": { "type": "array", "items": { "type": "number" }, "description": "Planned raw values for the first steps of the horizon" },
                "k_sd": { "type": "number", "description": "Shift in participant standard deviations" },
                "observed": { "type": "boolean", "description": "Replay the recorded future" },
                "mode": { "type": "string", "enum": ["absolute", "additive"] },
                "hours": { "type": "string", "description": "Allowed anchor hours, START-END" }
            } },
            "CounterfactualRequest": { "type": "object", "required": ["pid", "plan"], "properties": {
                "pid": { "type": "string" }, "anchor": { "type": "string" },
                "plan": { "$ref": "#/components/schemas/Plan" }
            } }
        } }
    })
}
