//! JSON chat API.
//!
//! | route                    | body / result                                   |
//! |--------------------------|-------------------------------------------------|
//! | `POST /api/chat`         | `{session_id, message}` -> [`ChatResponse`]     |
//! | `GET /api/health`        | `{"status":"ok","index_size":N}`                |
//! | `GET /api/config`        | effective configuration, secrets redacted       |
//! | `GET /api/sessions/{id}` | display transcript of one session               |
//!
//! Errors are `{"category", "message"}` with 400 for bad requests, 422 for
//! guardrail rejections, 503 when a provider is unreachable.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use groundrag::guardrails::GuardrailEvent;
use groundrag::pipeline::{Citation, PipelineWarning};
use groundrag::{Pipeline, VectorIndex};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::commands::interactive_pipeline;
use crate::config::Settings;
use crate::error::{CliError, Result};

pub const DEFAULT_SESSION: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub session_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    pub answer: String,
    pub citations: Vec<Citation>,
    pub guardrail_events: Vec<GuardrailEvent>,
    pub warnings: Vec<PipelineWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub citations: Vec<Citation>,
}

type Transcript = Arc<Mutex<Vec<Turn>>>;

pub struct AppState {
    pipeline: Pipeline,
    index: VectorIndex,
    config: Value,
    sessions: Mutex<HashMap<String, Transcript>>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, index: VectorIndex, config: Value) -> Self {
        Self {
            pipeline,
            index,
            config,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_settings(settings: &Settings) -> Result<Self> {
        Ok(Self::new(
            interactive_pipeline(settings)?,
            settings.load_index()?,
            settings.redacted(),
        ))
    }

    fn transcript(&self, session_id: &str) -> Transcript {
        self.sessions
            .lock()
            .expect("session map lock")
            .entry(session_id.to_string())
            .or_default()
            .clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/chat", post(chat))
        .route("/api/health", get(health))
        .route("/api/config", get(config))
        .route("/api/sessions/:id", get(session))
        .with_state(state)
}

fn status_for(category: &str) -> StatusCode {
    match category {
        "bad_request" => StatusCode::BAD_REQUEST,
        "unavailable" => StatusCode::SERVICE_UNAVAILABLE,
        "guardrail" => StatusCode::UNPROCESSABLE_ENTITY,
        "not_found" => StatusCode::NOT_FOUND,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for CliError {
    fn into_response(self) -> Response {
        let body = json!({ "category": self.category, "message": self.message });
        (status_for(self.category), Json(body)).into_response()
    }
}

async fn chat(
    State(state): State<Arc<AppState>>,
    payload: std::result::Result<Json<ChatRequest>, JsonRejection>,
) -> std::result::Result<Json<ChatResponse>, CliError> {
    let Json(request) = payload.map_err(|e| CliError::new("bad_request", e.body_text()))?;
    let message = request.message.trim().to_string();
    if message.is_empty() {
        return Err(CliError::new("bad_request", "message is empty"));
    }
    let session_id = match request.session_id.trim() {
        "" => DEFAULT_SESSION.to_string(),
        s => s.to_string(),
    };

    let started = Instant::now();
    let worker = state.clone();
    let question = message.clone();
    let result = tokio::task::spawn_blocking(move || worker.pipeline.answer_query(&question, &worker.index))
        .await
        .map_err(|e| CliError::new("internal", format!("answer task failed: {e}")))?;
    let answer = result.map_err(|e| {
        let e = CliError::from(e);
        tracing::warn!(session = %session_id, category = e.category, "chat request failed");
        e
    })?;
    tracing::info!(
        session = %session_id,
        citations = answer.citations.len(),
        ms = started.elapsed().as_millis() as u64,
        "answered"
    );

    let transcript = state.transcript(&session_id);
    {
        let mut turns = transcript.lock().expect("transcript lock");
        turns.push(Turn {
            role: "user".into(),
            text: message,
            citations: Vec::new(),
        });
        turns.push(Turn {
            role: "assistant".into(),
            text: answer.text.clone(),
            citations: answer.citations.clone(),
        });
    }
    Ok(Json(ChatResponse {
        session_id,
        answer: answer.text,
        citations: answer.citations,
        guardrail_events: answer.guardrail_events,
        warnings: answer.warnings,
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "index_size": state.index.len() }))
}

async fn config(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(state.config.clone())
}

async fn session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> std::result::Result<Json<Vec<Turn>>, CliError> {
    let transcript = state
        .sessions
        .lock()
        .expect("session map lock")
        .get(&id)
        .cloned()
        .ok_or_else(|| CliError::new("not_found", format!("no session '{id}'")))?;
    let turns = transcript.lock().expect("transcript lock").clone();
    Ok(Json(turns))
}

/// Builds everything synchronously, then serves until Ctrl-C.
pub fn serve_blocking(settings: Settings) -> Result<()> {
    // blocking HTTP clients inside the pipeline must be created, and
    // dropped, outside the async runtime
    let state = Arc::new(AppState::from_settings(&settings)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("io", format!("runtime: {e}")))?;
    let bind = settings.app.bind.clone();
    let app = router(state.clone());
    let served = runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| CliError::new("io", format!("bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::new("io", e.to_string()))?;
        eprintln!("listening on http://{addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                tokio::signal::ctrl_c().await.ok();
            })
            .await
            .map_err(|e| CliError::new("io", format!("server: {e}")))
    });
    drop(runtime);
    drop(state);
    served
}
