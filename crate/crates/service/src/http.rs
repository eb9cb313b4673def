//! HTTP/JSON API and the server-sent event stream.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use claw_core::adapters::{FaultInjector, SourceDescriptor};
use claw_core::executor::RecoveryPolicy;
use claw_core::intent::{IntentError, ObservationDescriptor, UserTurn};
use claw_core::planner::CostModel;
use claw_core::state::SnapshotId;
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{Event, Service, SessionConfig, SessionError, LOG_VERSION};

/// Version stamped on every JSON payload.
pub const API_VERSION: u32 = 1;

pub struct ApiError(pub SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match &self.0 {
            SessionError::Busy | SessionError::StalePlan { .. } | SessionError::AlreadyExecuted(_) => StatusCode::CONFLICT,
            SessionError::UnknownSession(_) | SessionError::UnknownPlan(_) | SessionError::UnknownSnapshot(_) => StatusCode::NOT_FOUND,
            SessionError::Intent(_) | SessionError::Planner(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Execution(_) => StatusCode::BAD_GATEWAY,
            SessionError::Storage(_) | SessionError::Replay(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.0.code(), "message": self.0.to_string() });
        if let SessionError::Intent(IntentError::UnparsableIntent { hint, .. }) = &self.0 {
            error["hint"] = json!(hint);
        }
        (self.status(), Json(json!({ "version": API_VERSION, "error": error }))).into_response()
    }
}

fn bad_request(message: String) -> Response {
    let body = json!({ "version": API_VERSION, "error": { "code": "bad-request", "message": message } });
    (StatusCode::BAD_REQUEST, Json(body)).into_response()
}

fn versioned(body: impl Serialize) -> Json<Value> {
    let mut v = serde_json::to_value(body).expect("payload serializes");
    if let Value::Object(m) = &mut v {
        m.insert("version".into(), json!(API_VERSION));
    }
    Json(v)
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    pub seed: Option<u64>,
    pub cost: Option<CostModel>,
    pub policy: Option<RecoveryPolicy>,
    pub faults: Option<FaultInjector>,
}

#[derive(Debug, Deserialize)]
pub struct TurnRequest {
    pub text: String,
    #[serde(default)]
    pub observation: Option<ObservationDescriptor>,
}

#[derive(Debug, Deserialize)]
pub struct IngestRequest {
    pub source: SourceDescriptor,
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    /// Resume after this sequence number, like `Last-Event-ID`.
    pub after: Option<u64>,
    /// Keep the stream open for new events (default) or end once caught up.
    pub follow: Option<bool>,
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/turns", post(turn))
        .route("/sessions/{id}/plans/{pid}/approve", post(approve))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/rollback/{snapshot}", post(rollback))
        .route("/sessions/{id}/events", get(events))
        .route("/assets", get(list_assets).post(ingest_asset))
        .with_state(service)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, SessionError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(SessionError::Storage(e.to_string())))?.map_err(ApiError)
}

async fn create_session(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return bad_request(e.to_string()),
        }
    };
    let explicit = req.seed.is_some() || req.cost.is_some() || req.policy.is_some() || req.faults.is_some();
    let config = explicit.then(|| SessionConfig {
        seed: req.seed.unwrap_or(svc.seed()),
        cost: req.cost.unwrap_or_default(),
        policy: req.policy.unwrap_or_default(),
        faults: req.faults,
    });
    match blocking(move || svc.create_session(config)).await {
        Ok(h) => {
            let s = h.state();
            (StatusCode::CREATED, versioned(json!({ "session_id": s.session_id, "head": s.head }))).into_response()
        }
        Err(e) => e.into_response(),
    }
}

async fn turn(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> Response {
    let req: TurnRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e.to_string()),
    };
    let result = blocking(move || {
        let h = svc.session(&id)?;
        h.turn(UserTurn { text: req.text, observation: req.observation, attachments: Vec::new() })
    })
    .await;
    match result {
        Ok(out) => versioned(out).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn approve(State(svc): State<Arc<Service>>, Path((id, pid)): Path<(String, String)>) -> Result<Json<Value>, ApiError> {
    let trace = blocking(move || svc.session(&id)?.approve(&pid)).await?;
    Ok(versioned(trace))
}

async fn state(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let h = blocking(move || svc.session(&id)).await?;
    Ok(versioned(h.state()))
}

async fn trace(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let traces = blocking(move || svc.session(&id)?.traces()).await?;
    Ok(versioned(json!({ "traces": traces })))
}

async fn rollback(State(svc): State<Arc<Service>>, Path((id, snapshot)): Path<(String, String)>) -> Result<Json<Value>, ApiError> {
    let head = blocking(move || svc.session(&id)?.rollback(&SnapshotId(snapshot))).await?;
    Ok(versioned(json!({ "head": head })))
}

async fn list_assets(State(svc): State<Arc<Service>>) -> Json<Value> {
    versioned(json!({ "assets": svc.assets() }))
}

async fn ingest_asset(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let req: IngestRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e.to_string()),
    };
    match blocking(move || svc.ingest_asset(&req.source)).await {
        Ok(record) => (StatusCode::CREATED, versioned(json!({ "asset": record }))).into_response(),
        Err(e) => e.into_response(),
    }
}

fn sse_event(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.seq.to_string())
        .event(e.kind.name())
        .data(serde_json::to_string(e).expect("event serializes"))
}

async fn events(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let handle = blocking(move || svc.session(&id)).await?;
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.after);
    let from = last_seen.map_or(0, |s| s + 1);
    let follow = q.follow.unwrap_or(true);
    let feed = handle.feed();
    // Subscribe before the first read so no append can slip between them.
    let rx = feed.subscribe();
    let stream = futures::stream::unfold((feed, rx, from, VecDeque::new()), move |(feed, mut rx, mut next, mut buf)| async move {
        loop {
            if let Some(e) = buf.pop_front() {
                let item: Result<SseEvent, Infallible> = Ok(sse_event(&e));
                return Some((item, (feed, rx, next, buf)));
            }
            let batch = feed.since(next);
            if !batch.is_empty() {
                next += batch.len() as u64;
                buf.extend(batch);
                continue;
            }
            if !follow || rx.changed().await.is_err() {
                return None;
            }
        }
    });
    debug_assert_eq!(LOG_VERSION, API_VERSION);
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
