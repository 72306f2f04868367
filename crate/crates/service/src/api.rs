//! HTTP and WebSocket routes.
//!
//! | route | method | body / query | reply |
//! |---|---|---|---|
//! | `/state` | GET | | latest [`StateSnapshot`] |
//! | `/session` | GET | | [`SessionStatus`] |
//! | `/log/summary` | GET | | counts by category, actor and action |
//! | `/terrain` | POST | `{"region": {"x","y","width","height"}, "delta"}` | `{"accepted": true, "order": n}` |
//! | `/utterance` | POST | `{"speaker"?, "text", "target"?}` | same |
//! | `/shadow` | POST | `{"cells": [[x, y], ...]}` | same |
//! | `/events` | GET (WebSocket) | `?since=<seq>` | one text frame per log line with seq > since |
//!
//! Rejected inputs answer 400 with `{"accepted": false, "error": "..."}`;
//! inputs after the session has ended answer 409.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use llmscape_core::session_log::LogSummary;
use llmscape_core::sim::ParticipantInput;
use llmscape_core::snapshot::StateSnapshot;
use llmscape_core::world::{CellRegion, EntityId};
use serde::Deserialize;
use serde_json::json;

use crate::feed::EventFeed;
use crate::session::{SessionHandle, SessionStatus};

pub fn router(session: SessionHandle) -> Router {
    Router::new()
        .route("/state", get(state))
        .route("/session", get(status))
        .route("/log/summary", get(summary))
        .route("/terrain", post(terrain))
        .route("/utterance", post(utterance))
        .route("/shadow", post(shadow))
        .route("/events", get(events))
        .with_state(session)
}

async fn state(State(s): State<SessionHandle>) -> Json<StateSnapshot> {
    Json(s.snapshot())
}

async fn status(State(s): State<SessionHandle>) -> Json<SessionStatus> {
    Json(s.status())
}

async fn summary(State(s): State<SessionHandle>) -> Json<LogSummary> {
    Json(s.summary())
}

fn submit(s: &SessionHandle, input: ParticipantInput) -> Response {
    if !s.is_running() {
        return (
            StatusCode::CONFLICT,
            Json(json!({"accepted": false, "error": "session has ended"})),
        )
            .into_response();
    }
    match s.inbox().enqueue(input) {
        Ok(order) => (StatusCode::ACCEPTED, Json(json!({"accepted": true, "order": order}))).into_response(),
        Err(e) => (
            StatusCode::BAD_REQUEST,
            Json(json!({"accepted": false, "error": e.to_string()})),
        )
            .into_response(),
    }
}

#[derive(Deserialize)]
struct TerrainBody {
    region: CellRegion,
    delta: f64,
}

async fn terrain(State(s): State<SessionHandle>, Json(b): Json<TerrainBody>) -> Response {
    submit(
        &s,
        ParticipantInput::TerrainEdit {
            region: b.region,
            delta: b.delta,
        },
    )
}

#[derive(Deserialize)]
struct UtteranceBody {
    #[serde(default)]
    speaker: Option<String>,
    text: String,
    #[serde(default)]
    target: Option<EntityId>,
}

async fn utterance(State(s): State<SessionHandle>, Json(b): Json<UtteranceBody>) -> Response {
    let speaker = b.speaker.unwrap_or_else(|| s.default_speaker().to_owned());
    submit(
        &s,
        ParticipantInput::Utterance {
            speaker,
            text: b.text,
            target: b.target,
        },
    )
}

#[derive(Deserialize)]
struct ShadowBody {
    cells: Vec<(usize, usize)>,
}

async fn shadow(State(s): State<SessionHandle>, Json(b): Json<ShadowBody>) -> Response {
    submit(&s, ParticipantInput::Shadow { cells: b.cells })
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

async fn events(ws: WebSocketUpgrade, Query(q): Query<Since>, State(s): State<SessionHandle>) -> Response {
    let feed = s.feed().clone();
    ws.on_upgrade(move |socket| stream(socket, feed, q.since))
}

async fn stream(mut socket: WebSocket, feed: EventFeed, since: u64) {
    let mut rx = feed.subscribe();
    let mut last = since;
    loop {
        rx.borrow_and_update();
        for (seq, line) in feed.since(last) {
            if socket.send(Message::Text(line.as_ref().into())).await.is_err() {
                return;
            }
            last = seq;
        }
        tokio::select! {
            changed = rx.changed() => {
                if changed.is_err() {
                    return;
                }
            }
            msg = socket.recv() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
