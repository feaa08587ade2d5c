//! HTTP interface for the operator console.
//!
//! | method | path           | body / response |
//! |--------|----------------|-----------------|
//! | POST   | `/v1/control`  | `{"command": "start_registration"}` → `{"schema", "state", "layout"?}`; 409 when the command is illegal in the current phase, 400 for an unknown command |
//! | GET    | `/v1/events`   | server-sent events; the first message is the latest snapshot, then `snapshot`, `advice`, `phase` and `error` messages as they happen |
//! | GET    | `/v1/snapshot` | the current snapshot message |
//! | GET    | `/v1/layout`   | the audience layout, ordered left to right; 404 before registration |
//! | POST   | `/v1/ingest`   | newline-delimited frame and gaze records → `{"schema", "records", "frames", "rejected"}` |
//!
//! Every response and pushed message carries `"schema": 1`.

use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use gazecoach_core::session::{ControlCommand, IngestRecord, Phase};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::feed::{FeedBody, FeedMessage, FEED_SCHEMA};
use crate::worker::ServiceClient;

/// Largest accepted ingest body.
pub const INGEST_LIMIT: usize = 256 << 20;

#[derive(Deserialize)]
struct ControlRequest {
    command: String,
}

pub fn router(client: ServiceClient) -> Router {
    Router::new()
        .route("/v1/control", post(control))
        .route("/v1/events", get(events))
        .route("/v1/snapshot", get(snapshot))
        .route("/v1/layout", get(layout))
        .route("/v1/ingest", post(ingest).layer(DefaultBodyLimit::max(INGEST_LIMIT)))
        .with_state(client)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"schema": FEED_SCHEMA, "error": message.into()}))).into_response()
}

fn stopped() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "session has ended")
}

fn with_schema(mut v: Value) -> Value {
    v["schema"] = json!(FEED_SCHEMA);
    v
}

async fn control(State(client): State<ServiceClient>, body: Bytes) -> Response {
    let command: ControlCommand = match serde_json::from_slice::<ControlRequest>(&body) {
        Ok(req) => match req.command.parse() {
            Ok(c) => c,
            Err(e) => return error(StatusCode::BAD_REQUEST, e),
        },
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("expected {{\"command\": ...}}: {e}")),
    };
    match client.control(command).await {
        Ok(Ok(reply)) => Json(with_schema(serde_json::to_value(reply).expect("reply serializes"))).into_response(),
        Ok(Err(rejected)) => (
            StatusCode::CONFLICT,
            Json(with_schema(serde_json::to_value(rejected).expect("rejection serializes"))),
        )
            .into_response(),
        Err(_) => stopped(),
    }
}

async fn snapshot(State(client): State<ServiceClient>) -> Response {
    match client.snapshot().await {
        Ok(s) => Json(FeedMessage::new(FeedBody::Snapshot(s))).into_response(),
        Err(_) => stopped(),
    }
}

async fn layout(State(client): State<ServiceClient>) -> Response {
    match client.layout().await {
        Ok(Some(l)) => Json(with_schema(json!({ "layout": l }))).into_response(),
        Ok(None) => error(StatusCode::NOT_FOUND, "no audience layout yet"),
        Err(_) => stopped(),
    }
}

async fn ingest(State(client): State<ServiceClient>, body: Bytes) -> Response {
    let Ok(text) = std::str::from_utf8(&body) else {
        return error(StatusCode::BAD_REQUEST, "body is not UTF-8");
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match IngestRecord::parse(line) {
            Ok(r) => records.push(r),
            Err(e) => return error(StatusCode::BAD_REQUEST, format!("line {}: {e}", i + 1)),
        }
    }
    match client.ingest(records).await {
        Ok(report) => Json(with_schema(serde_json::to_value(report).expect("report serializes"))).into_response(),
        Err(_) => stopped(),
    }
}

fn to_event(msg: &FeedMessage) -> Event {
    Event::default()
        .event(msg.kind())
        .data(serde_json::to_string(msg).expect("feed message serializes"))
}

fn is_final(msg: &FeedMessage) -> bool {
    matches!(&msg.body, FeedBody::Phase(p) if p.phase == Phase::Terminated)
}

/// Push stream. Ends after the termination phase message.
async fn events(State(client): State<ServiceClient>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let (latest, rx) = client.subscribe();
    let first = FeedMessage::new(FeedBody::Snapshot(latest));
    let done = first_is_terminal(&first);
    let head = stream::once(async move { Ok(to_event(&first)) });
    let tail = stream::unfold((rx, done), |(mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(msg) => {
                    let done = is_final(&msg);
                    return Some((Ok(to_event(&msg)), (rx, done)));
                }
                // a slow client skips ahead; the next snapshot is complete
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(head.chain(tail)).keep_alive(KeepAlive::default())
}

fn first_is_terminal(msg: &FeedMessage) -> bool {
    matches!(&msg.body, FeedBody::Snapshot(s) if s.phase == Phase::Terminated)
}
