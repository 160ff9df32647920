//! HTTP service for pairwise annotation.
//!
//! ```text
//! GET  /api/session/{id}/next-pair?annotator=NAME   200 pair | 204 none left
//! POST /api/session/{id}/judgment                   201 | 404 | 409 | 422
//! GET  /api/session/{id}/results                    200
//! ```
//!
//! Every other path is served from the static UI directory when one is
//! configured.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mirror_core::evaluation::{Choice, EvalError, EvalSession, Judgment};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::journal::Journal;

/// A session and the journal that backs it. Judgments are journaled under
/// the lock before they are acknowledged.
pub struct LiveSession {
    pub session: EvalSession,
    pub journal: Journal,
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

impl AppState {
    pub fn new(live: Vec<LiveSession>) -> Self {
        let map = live
            .into_iter()
            .map(|l| (l.session.id.clone(), Arc::new(Mutex::new(l))))
            .collect();
        Self { sessions: Arc::new(map) }
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ApiError> {
        self.sessions.get(id).cloned().ok_or_else(|| ApiError {
            status: StatusCode::NOT_FOUND,
            code: "unknown_session",
            message: format!("no session {:?}", id),
        })
    }

    /// Snapshot of a session's current state.
    pub fn snapshot(&self, id: &str) -> Option<EvalSession> {
        let s = self.sessions.get(id)?;
        let guard = s.lock().unwrap_or_else(|e| e.into_inner());
        Some(guard.session.clone())
    }
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "code": self.code}))).into_response()
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let status = match e {
            EvalError::UnknownPair(_) => StatusCode::NOT_FOUND,
            EvalError::Duplicate { .. } | EvalError::PairComplete(_) => StatusCode::CONFLICT,
            EvalError::InvalidChoice(_) | EvalError::EmptyAnnotator => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

fn internal(e: anyhow::Error) -> ApiError {
    ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "journal_failure",
        message: format!("{:#}", e),
    }
}

#[derive(Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

async fn next_pair(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Response, ApiError> {
    let annotator = q.annotator.filter(|a| !a.is_empty()).ok_or(EvalError::EmptyAnnotator)?;
    let live = state.get(&id)?;
    let view = {
        let guard = live.lock().unwrap_or_else(|e| e.into_inner());
        guard.session.next_pair_for(&annotator)
    };
    Ok(match view {
        Some(v) => Json(v).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Deserialize)]
struct JudgmentBody {
    pair_id: usize,
    annotator: String,
    choice: String,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn judgment(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<JudgmentBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let live = state.get(&id)?;
    let Json(body) = body.map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        code: "invalid_body",
        message: e.body_text(),
    })?;
    let choice: Choice = body.choice.parse()?;
    let j = Judgment {
        pair_id: body.pair_id,
        annotator: body.annotator,
        choice,
        timestamp: now_ms(),
    };
    let live = live.clone();
    let recorded = tokio::task::spawn_blocking(move || -> Result<usize, ApiError> {
        let mut guard = live.lock().unwrap_or_else(|e| e.into_inner());
        guard.session.check_judgment(&j)?;
        guard.journal.append(&j).map_err(internal)?;
        let pair = j.pair_id;
        guard.session.record_judgment(j)?;
        Ok(guard.session.judgments_for(pair).count())
    })
    .await
    .map_err(|e| internal(e.into()))??;
    Ok((
        StatusCode::CREATED,
        Json(json!({"status": "recorded", "pair_id": body.pair_id, "judgments": recorded})),
    )
        .into_response())
}

async fn results(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let live = state.get(&id)?;
    let r = {
        let guard = live.lock().unwrap_or_else(|e| e.into_inner());
        guard.session.results()
    };
    Ok(Json(r).into_response())
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session/{id}/next-pair", get(next_pair))
        .route("/api/session/{id}/judgment", post(judgment))
        .route("/api/session/{id}/results", get(results))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serve until the listener fails or the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
