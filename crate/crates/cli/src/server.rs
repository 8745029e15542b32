//! Leaderboard wire API.
//!
//! | method | path | auth |
//! |---|---|---|
//! | GET | `/api/v1/health` | none |
//! | GET | `/api/v1/leaderboard?task=&view=` | operator for `view=private` |
//! | GET | `/api/v1/teams/{id}/history?task=&view=` | operator for `view=private` |
//! | GET | `/api/v1/roc?team=&task=&view=` | operator for `view=private` |
//! | POST | `/api/v1/runs` (body: `RunIngest`) | operator |
//! | POST | `/api/v1/round` (body: `{"active": bool}`) | operator |
//!
//! `view` defaults to `public`. Operators authenticate with
//! `Authorization: Bearer <token>`, the token coming from
//! [`TOKEN_ENV`]. Without a configured token every operator request is
//! refused. Errors are `{"error": <kind>, "message": <text>}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use blindeval::board::{BoardError, RocView};
use blindeval::{Board, LeaderboardEntry, RunIngest, SubmissionHistoryPoint, Task, View};
use serde::{Deserialize, Serialize};

pub const TOKEN_ENV: &str = "BLINDEVAL_OPERATOR_TOKEN";

pub struct AppState {
    pub board: Board,
    pub token: Option<String>,
}

pub type Shared = Arc<AppState>;

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    BadRequest(String),
    Board(BoardError),
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::Unauthorized => {
                (StatusCode::UNAUTHORIZED, "unauthorized", "operator credential required".to_string())
            }
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m),
            ApiError::Board(e) => {
                let (status, kind) = match &e {
                    BoardError::DuplicateRun(_) => (StatusCode::CONFLICT, "duplicate_run"),
                    BoardError::UnknownTeam(_) => (StatusCode::NOT_FOUND, "unknown_team"),
                    BoardError::ScoresUnavailable { .. } => (StatusCode::NOT_FOUND, "scores_unavailable"),
                    BoardError::RocHidden => (StatusCode::FORBIDDEN, "roc_hidden"),
                    BoardError::NonMonotonicTimestamp { .. } => {
                        (StatusCode::UNPROCESSABLE_ENTITY, "non_monotonic_timestamp")
                    }
                    BoardError::InvalidReport(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_report"),
                    BoardError::Corrupt { .. } | BoardError::Io(_) => {
                        (StatusCode::INTERNAL_SERVER_ERROR, "storage")
                    }
                };
                (status, kind, e.to_string())
            }
        };
        (status, Json(ErrorBody { error: kind.into(), message })).into_response()
    }
}

impl From<BoardError> for ApiError {
    fn from(e: BoardError) -> Self {
        ApiError::Board(e)
    }
}

fn tokens_match(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn is_operator(state: &AppState, headers: &HeaderMap) -> bool {
    let Some(expected) = state.token.as_deref().filter(|t| !t.is_empty()) else { return false };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|given| tokens_match(given.trim().as_bytes(), expected.as_bytes()))
}

fn parse_task(raw: Option<&str>) -> Result<Task, ApiError> {
    raw.ok_or_else(|| ApiError::BadRequest("task is required".into()))?.parse().map_err(ApiError::BadRequest)
}

fn parse_view(raw: Option<&str>, state: &AppState, headers: &HeaderMap) -> Result<View, ApiError> {
    let view = match raw {
        None => View::Public,
        Some(v) => v.parse().map_err(ApiError::BadRequest)?,
    };
    if view == View::Private && !is_operator(state, headers) {
        return Err(ApiError::Unauthorized);
    }
    Ok(view)
}

#[derive(Deserialize)]
pub struct BoardQuery {
    task: Option<String>,
    view: Option<String>,
    team: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct LeaderboardResponse {
    pub task: Task,
    pub view: View,
    pub round_active: bool,
    pub entries: Vec<LeaderboardEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct HistoryResponse {
    pub team_id: String,
    pub task: Task,
    pub view: View,
    pub points: Vec<SubmissionHistoryPoint>,
}

#[derive(Serialize, Deserialize)]
pub struct RoundRequest {
    pub active: bool,
}

async fn health(State(state): State<Shared>) -> Json<serde_json::Value> {
    let snap = state.board.snapshot();
    Json(serde_json::json!({"status": "ok", "runs": snap.run_count(), "round_active": snap.round_active()}))
}

async fn leaderboard(
    State(state): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<BoardQuery>,
) -> Result<Json<LeaderboardResponse>, ApiError> {
    let task = parse_task(q.task.as_deref())?;
    let view = parse_view(q.view.as_deref(), &state, &headers)?;
    let snap = state.board.snapshot();
    Ok(Json(LeaderboardResponse { task, view, round_active: snap.round_active(), entries: snap.leaderboard(task, view) }))
}

async fn history(
    State(state): State<Shared>,
    headers: HeaderMap,
    Path(team_id): Path<String>,
    Query(q): Query<BoardQuery>,
) -> Result<Json<HistoryResponse>, ApiError> {
    let task = parse_task(q.task.as_deref())?;
    let view = parse_view(q.view.as_deref(), &state, &headers)?;
    let points = state.board.snapshot().history(&team_id, task, view)?;
    Ok(Json(HistoryResponse { team_id, task, view, points }))
}

async fn roc(
    State(state): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<BoardQuery>,
) -> Result<Json<RocView>, ApiError> {
    let team = q.team.ok_or_else(|| ApiError::BadRequest("team is required".into()))?;
    let task = parse_task(q.task.as_deref())?;
    let view = parse_view(q.view.as_deref(), &state, &headers)?;
    Ok(Json(state.board.snapshot().roc(&team, task, view)?))
}

async fn ingest(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    if !is_operator(&state, &headers) {
        return Err(ApiError::Unauthorized);
    }
    let run: RunIngest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::Board(BoardError::InvalidReport(format!("body is not a run: {e}"))))?;
    let ack = state.board.ingest(run)?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn round(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    if !is_operator(&state, &headers) {
        return Err(ApiError::Unauthorized);
    }
    let req: RoundRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("expected {{\"active\": bool}}: {e}")))?;
    let ack = state.board.set_round_active(req.active)?;
    Ok(Json(ack).into_response())
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/leaderboard", get(leaderboard))
        .route("/api/v1/teams/{id}/history", get(history))
        .route("/api/v1/roc", get(roc))
        .route("/api/v1/runs", post(ingest))
        .route("/api/v1/round", post(round))
        .with_state(state)
}

/// Serve until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
