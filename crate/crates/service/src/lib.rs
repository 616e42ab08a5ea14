//! Annotation session server.
//!
//! A session is 20 task instances plus one control at a seeded random
//! position. Each submitted record is sanity-checked on the spot; completing
//! the session scores the HIT and applies the participant policy (one hour
//! block for a low-performance HIT, permanent exclusion for low reliability).
//!
//! All state changes go to an append-only JSON-lines event log; replaying it
//! rebuilds sessions, the annotation store and participant statuses.
//!
//! # HTTP API (version 1)
//!
//! Every JSON response carries `"version": 1`. Errors look like
//! `{"version":1,"error":"<code>","message":"..."}` plus `retry_after_secs`
//! for blocked participants and `missing` for incomplete sessions.
//!
//! | method | path | body | success |
//! |---|---|---|---|
//! | POST | `/v1/sessions` | `{"participant_id", "eq_passed"?}` | 201 session descriptor |
//! | GET | `/v1/sessions/{id}/next` | | 200 `{item, done}` |
//! | POST | `/v1/sessions/{id}/annotations` | annotation record JSON | 200 `{accepted, position, violations}` |
//! | POST | `/v1/sessions/{id}/complete` | | 200 `{outcome, status}` |
//! | GET | `/v1/admin/qc` | | 200 QC report |
//! | GET | `/v1/admin/pool` | | 200 pool status |
//! | GET | `/v1/admin/annotations` | | 200 annotation table (CSV) |
//! | GET | `/v1/admin/hits` | | 200 HIT assignment table (CSV) |

mod pool;
mod state;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use bodyaffect::annotations::{write_annotations, ParticipantStatus};
use bodyaffect::quality::{write_hit_assignments, HitOutcome, QcError, SanityViolation};
use bodyaffect::AnnotationRecord;

pub use pool::{read_pool, Pool, PoolItem};
pub use state::{
    Event, NextItem, Participant, PoolEntry, PoolStatus, Sampling, Service, ServiceConfig, Session, SessionState,
};

pub const API_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("participant `{participant_id}` is blocked for another {retry_after} s")]
    Blocked { participant_id: String, until: u64, retry_after: u64 },
    #[error("participant `{0}` is permanently excluded")]
    Excluded(String),
    #[error("participant `{0}` has not passed the EQ test")]
    EqRequired(String),
    #[error("session `{0}` is closed")]
    Closed(String),
    #[error("out of order: expected {}, got `{got}`", expected.as_deref().map_or("nothing".to_string(), |e| format!("`{e}`")))]
    OutOfOrder { expected: Option<String>, got: String },
    #[error("session incomplete, {} item(s) missing", missing.len())]
    Incomplete { missing: Vec<String> },
    #[error("only {available} unseen instances left for `{participant_id}`")]
    PoolExhausted { participant_id: String, available: usize },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("pool: {0}")]
    Pool(String),
    #[error("event log: {0}")]
    Log(String),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::Blocked { .. } => "blocked",
            ServiceError::Excluded(_) => "excluded",
            ServiceError::EqRequired(_) => "eq_required",
            ServiceError::Closed(_) => "session_closed",
            ServiceError::OutOfOrder { .. } => "out_of_order",
            ServiceError::Incomplete { .. } => "incomplete",
            ServiceError::PoolExhausted { .. } => "pool_exhausted",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Qc(_) => "qc_unavailable",
            ServiceError::Pool(_) | ServiceError::Log(_) | ServiceError::Csv(_) | ServiceError::Io(_) => "internal",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Blocked { .. } | ServiceError::Excluded(_) | ServiceError::EqRequired(_) => StatusCode::FORBIDDEN,
            ServiceError::Closed(_)
            | ServiceError::OutOfOrder { .. }
            | ServiceError::Incomplete { .. }
            | ServiceError::PoolExhausted { .. }
            | ServiceError::Qc(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let mut body = json!({ "version": API_VERSION, "error": self.code(), "message": self.to_string() });
        match &self {
            ServiceError::Blocked { retry_after, until, .. } => {
                body["retry_after_secs"] = json!(retry_after);
                body["blocked_until"] = json!(until);
            }
            ServiceError::Incomplete { missing } => body["missing"] = json!(missing),
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}

/// Unix seconds. Injected so tests can move time.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(t: u64) -> Self {
        ManualClock(AtomicU64::new(t))
    }

    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Shared handle. One lock gives every operation a total order.
#[derive(Clone)]
pub struct AppState {
    service: Arc<Mutex<Service>>,
    clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(service: Service, clock: Arc<dyn Clock>) -> Self {
        AppState { service: Arc::new(Mutex::new(service)), clock }
    }

    pub fn lock(&self) -> MutexGuard<'_, Service> {
        // a panicked handler leaves state consistent: events apply atomically
        self.service.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    #[serde(default)]
    pub eq_passed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub version: u32,
    pub session_id: String,
    pub participant_id: String,
    pub total: usize,
    pub position: usize,
    pub open: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextResponse {
    pub version: u32,
    pub session_id: String,
    pub done: bool,
    pub item: Option<NextItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub version: u32,
    pub accepted: bool,
    /// Cursor after this submission.
    pub position: usize,
    pub violations: Vec<SanityViolation>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub version: u32,
    pub outcome: HitOutcome,
    pub status: ParticipantStatus,
}

fn descriptor(s: &Session) -> SessionDescriptor {
    SessionDescriptor {
        version: API_VERSION,
        session_id: s.session_id.clone(),
        participant_id: s.participant_id.clone(),
        total: s.instance_ids.len(),
        position: s.cursor(),
        open: s.is_open(),
    }
}

async fn create_session(
    State(app): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionDescriptor>), ServiceError> {
    let now = app.clock.now();
    let mut svc = app.lock();
    let s = svc.create_session(&req.participant_id, req.eq_passed, now)?;
    Ok((StatusCode::CREATED, Json(descriptor(s))))
}

async fn next_item(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<NextResponse>, ServiceError> {
    let svc = app.lock();
    let item = svc.next_item(&id)?;
    Ok(Json(NextResponse { version: API_VERSION, session_id: id, done: item.is_none(), item }))
}

async fn submit(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(record): Json<AnnotationRecord>,
) -> Result<Json<SubmitResponse>, ServiceError> {
    let now = app.clock.now();
    let mut svc = app.lock();
    let violations = svc.submit(&id, record, now)?;
    let position = svc.session(&id)?.cursor();
    Ok(Json(SubmitResponse { version: API_VERSION, accepted: true, position, violations }))
}

async fn complete(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<CompleteResponse>, ServiceError> {
    let now = app.clock.now();
    let (outcome, status) = app.lock().complete(&id, now)?;
    Ok(Json(CompleteResponse { version: API_VERSION, outcome, status }))
}

async fn admin_qc(State(app): State<AppState>) -> Result<Response, ServiceError> {
    let now = app.clock.now();
    let report = app.lock().qc_report(now)?;
    let mut v = serde_json::to_value(report).map_err(|e| ServiceError::Log(e.to_string()))?;
    v["version"] = json!(API_VERSION);
    Ok(Json(v).into_response())
}

async fn admin_pool(State(app): State<AppState>) -> Response {
    let now = app.clock.now();
    let status = app.lock().pool_status(now);
    let mut v = serde_json::to_value(status).unwrap_or_default();
    v["version"] = json!(API_VERSION);
    Json(v).into_response()
}

fn csv_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response()
}

async fn admin_annotations(State(app): State<AppState>) -> Result<Response, ServiceError> {
    let mut buf = Vec::new();
    write_annotations(&mut buf, app.lock().store()).map_err(|e| ServiceError::Log(e.to_string()))?;
    Ok(csv_response(buf))
}

async fn admin_hits(State(app): State<AppState>) -> Result<Response, ServiceError> {
    let mut buf = Vec::new();
    write_hit_assignments(&mut buf, app.lock().hit_assignments())?;
    Ok(csv_response(buf))
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/next", get(next_item))
        .route("/v1/sessions/{id}/annotations", post(submit))
        .route("/v1/sessions/{id}/complete", post(complete))
        .route("/v1/admin/qc", get(admin_qc))
        .route("/v1/admin/pool", get(admin_pool))
        .route("/v1/admin/annotations", get(admin_annotations))
        .route("/v1/admin/hits", get(admin_hits))
        .with_state(app)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, app: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
