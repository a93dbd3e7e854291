//! HTTP routes. Every handler reads through the run store; nothing here
//! holds state of its own.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tapeloop_core::bus::{EventRecord, Granularity};
use tapeloop_core::hitl::{EscalationTicket, HitlError, Resolution, ResolutionBody, TicketFilter};
use tapeloop_core::metrics::{compute_run_metrics, RunMetrics};
use tapeloop_core::model::{AgentId, Digest, Phase, RunId};
use tapeloop_core::workflow::{gate_failures, ExecError, GateFailure, RunEvent, SignOffReport};

use crate::store::{CreateRunRequest, RunSource, RunStore, RunSummary, StoreError};

/// Wire form of one event record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFrame {
    pub seq: u64,
    pub granularity: Granularity,
    pub sender: AgentId,
    pub payload: RunEvent,
    pub state_hash: Digest,
}

impl From<EventRecord> for EventFrame {
    fn from(r: EventRecord) -> Self {
        Self {
            seq: r.seq,
            granularity: r.granularity,
            sender: r.sender,
            payload: r.payload,
            state_hash: r.state_hash_after,
        }
    }
}

/// Final `end` event of a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEnd {
    pub phase: Phase,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: RunId,
    pub design_id: String,
    pub phase: Phase,
    pub signoff: Option<SignOffReport>,
    /// Unmet sign-off conditions, empty once signed off.
    pub gate_failures: Vec<GateFailure>,
    pub metrics: Option<RunMetrics>,
    pub abort_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionAck {
    pub run_id: RunId,
    pub resolution: Resolution,
}

#[derive(Debug, Default, Deserialize)]
pub struct AbortRequest {
    #[serde(default)]
    pub reason: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default = "first_seq")]
    pub from: u64,
}

fn first_seq() -> u64 {
    1
}

/// JSON error body: `{"error": code, "message": text, "details": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

fn hitl_error(e: HitlError) -> ApiError {
    let (status, code) = match &e {
        HitlError::TicketClosed(_) => (StatusCode::CONFLICT, "ticket-closed"),
        HitlError::ConflictingState(_) => (StatusCode::CONFLICT, "conflicting-state"),
        HitlError::DuplicateTicket(_) => (StatusCode::CONFLICT, "duplicate-ticket"),
        HitlError::PayloadShapeMismatch(_) => (StatusCode::UNPROCESSABLE_ENTITY, "payload-shape-mismatch"),
        HitlError::NotAllowed { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "not-allowed"),
        HitlError::EmptySpan(..) => (StatusCode::UNPROCESSABLE_ENTITY, "empty-span"),
        HitlError::UnknownTicket(_) => (StatusCode::NOT_FOUND, "unknown-ticket"),
    };
    ApiError::new(status, code, e.to_string())
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Invalid(errors) => {
                let mut err = ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "validation-failed",
                    "request failed validation",
                );
                err.details = serde_json::to_value(&errors).ok();
                err
            }
            StoreError::BadRequest(m) => ApiError::new(StatusCode::BAD_REQUEST, "bad-request", m),
            e @ StoreError::UnknownBackend(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown-backend", e.to_string()),
            e @ StoreError::UnknownRun(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown-run", e.to_string()),
            e @ StoreError::UnknownTicket(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown-ticket", e.to_string()),
            e @ StoreError::Finished(_) => ApiError::new(StatusCode::CONFLICT, "run-finished", e.to_string()),
            StoreError::Hitl(h) => hitl_error(h),
            StoreError::Exec(ExecError::Illegal(i)) => {
                ApiError::new(StatusCode::CONFLICT, "illegal-transition", i.to_string())
            }
            StoreError::Exec(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
            StoreError::Io(m) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", m),
        }
    }
}

type Shared = Arc<RunStore>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/:id", get(get_run))
        .route("/runs/:id/events", get(stream_events))
        .route("/runs/:id/transcript", get(transcript))
        .route("/runs/:id/report", get(report))
        .route("/runs/:id/abort", post(abort_run))
        .route("/escalations", get(list_escalations))
        .route("/escalations/:id/resolution", post(resolve))
        .with_state(store)
}

async fn create_run(
    State(store): State<Shared>,
    Json(req): Json<CreateRunRequest>,
) -> ApiResult<(StatusCode, Json<RunSummary>)> {
    let summary = tokio::task::spawn_blocking(move || store.create_run(req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_runs(State(store): State<Shared>) -> Json<Vec<RunSummary>> {
    Json(store.summaries())
}

async fn get_run(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<RunSummary>> {
    Ok(Json(RunSummary::of(&store.source(&id)?.state())))
}

async fn transcript(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Vec<EventFrame>>> {
    let frames = store
        .source(&id)?
        .records_from(1)
        .into_iter()
        .filter(|r| r.granularity == Granularity::Chat)
        .map(EventFrame::from)
        .collect();
    Ok(Json(frames))
}

pub fn run_report(source: &RunSource) -> RunReport {
    let state = source.state();
    let records = source.records_from(1);
    RunReport {
        run_id: state.run_id.clone(),
        design_id: state.design_id().to_string(),
        phase: state.phase,
        gate_failures: if state.signoff.is_some() {
            Vec::new()
        } else {
            gate_failures(&state)
        },
        signoff: state.signoff.clone(),
        metrics: compute_run_metrics(&records).ok(),
        abort_reason: state.abort_reason.clone(),
    }
}

async fn report(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<RunReport>> {
    Ok(Json(run_report(&store.source(&id)?)))
}

async fn abort_run(
    State(store): State<Shared>,
    Path(id): Path<String>,
    body: Option<Json<AbortRequest>>,
) -> ApiResult<Json<RunSummary>> {
    let reason = body
        .and_then(|b| b.0.reason)
        .unwrap_or_else(|| "aborted by operator".into());
    Ok(Json(store.abort(&id, &reason)?))
}

async fn list_escalations(
    State(store): State<Shared>,
    Query(filter): Query<TicketFilter>,
) -> Json<Vec<EscalationTicket>> {
    Json(store.tickets(&filter))
}

async fn resolve(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<ResolutionBody>,
) -> ApiResult<Json<ResolutionAck>> {
    let (run_id, resolution) = store.resolve(&id, &body)?;
    Ok(Json(ResolutionAck { run_id, resolution }))
}

struct Tail {
    source: RunSource,
    next: u64,
    buf: VecDeque<EventRecord>,
    ended: bool,
}

/// Frames from `from` onward, then the live tail, then one `end` event.
pub fn frames(source: RunSource, from: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    let tail = Tail {
        source,
        next: from.max(1),
        buf: VecDeque::new(),
        ended: false,
    };
    futures::stream::unfold(Some(tail), |tail| async move {
        let mut tail = tail?;
        loop {
            if let Some(r) = tail.buf.pop_front() {
                let seq = r.seq;
                let data = serde_json::to_string(&EventFrame::from(r)).expect("frames serialize");
                let event = Event::default().event("frame").id(seq.to_string()).data(data);
                return Some((Ok(event), Some(tail)));
            }
            if tail.ended {
                let state = tail.source.state();
                let end = StreamEnd {
                    phase: state.phase,
                    last_seq: state.last_seq,
                };
                let event = Event::default()
                    .event("end")
                    .data(serde_json::to_string(&end).expect("end serializes"));
                return Some((Ok(event), None));
            }
            // Terminal is checked first: a run that was terminal before this
            // fetch has nothing left to append.
            let terminal = tail.source.is_terminal();
            let fresh = tail.source.records_from(tail.next);
            if let Some(last) = fresh.last() {
                tail.next = last.seq + 1;
                tail.buf.extend(fresh);
                continue;
            }
            if terminal {
                tail.ended = true;
                continue;
            }
            if let RunSource::Live(h) = &tail.source {
                let h = h.clone();
                let after = tail.next - 1;
                let _ = tokio::task::spawn_blocking(move || h.wait_for(after, Duration::from_millis(500))).await;
            }
        }
    })
}

async fn stream_events(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let source = store.source(&id)?;
    Ok(Sse::new(frames(source, q.from)).keep_alive(KeepAlive::default()))
}
