//! HTTP front end for a [`QaEngine`].
//!
//! All endpoints live under `/api/` and speak UTF-8 JSON. Errors are
//! `{"error": "..."}` with a status code that tells the caller whose fault
//! it was. The engine and ingestion pipeline are blocking, so handlers run
//! them on the blocking pool.

pub mod session;

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use kleio_core::corpus::{CorpusError, DocumentStore};
use kleio_core::embedder::EmbedError;
use kleio_core::indexing::{ingest_into, IndexingError};
use kleio_core::llm_gateway::GatewayError;
use kleio_core::qa_pipeline::{PipelineError, SourceRef};
use kleio_core::vector_index::{eligible, IndexError, IndexLock};
use kleio_core::QaEngine;

pub use session::{Session, Sessions, Turn};

pub const DEFAULT_PORT: u16 = 7071;
pub const DEFAULT_K: usize = 4;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("refusing to bind non-loopback address {0} without --allow-remote")]
    RemoteBindRefused(SocketAddr),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Binding anywhere but loopback must be asked for explicitly.
pub fn check_bind(addr: &SocketAddr, allow_remote: bool) -> Result<(), ServiceError> {
    if addr.ip().is_loopback() || allow_remote {
        Ok(())
    } else {
        Err(ServiceError::RemoteBindRefused(*addr))
    }
}

pub struct AppState {
    pub engine: QaEngine,
    pub store: Mutex<DocumentStore>,
    /// Where ingests persist the index. `None` keeps it in memory only.
    pub index_dir: Option<PathBuf>,
    pub sessions: Sessions,
    pub default_k: usize,
}

impl AppState {
    pub fn new(engine: QaEngine, store: DocumentStore, index_dir: Option<PathBuf>) -> Self {
        AppState {
            engine,
            store: Mutex::new(store),
            index_dir,
            sessions: Sessions::new(),
            default_k: DEFAULT_K,
        }
    }

    pub fn with_sessions(mut self, sessions: Sessions) -> Self {
        self.sessions = sessions;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct RouterOptions {
    /// Served at `/` for anything outside `/api/`.
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
}

pub fn router(state: Arc<AppState>, opts: &RouterOptions) -> Router {
    let origins = if opts.cors_origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(
            opts.cors_origins
                .iter()
                .filter_map(|o| HeaderValue::from_str(o).ok()),
        )
    };
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/api/ask", post(ask))
        .route("/api/ingest", post(ingest))
        .route("/api/chunk/{chunk_id}", get(chunk))
        .route("/api/session/{session_id}", get(session))
        .route("/api/health", get(health))
        .with_state(state);
    let app = match &opts.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

/// Serves `app` until `shutdown` resolves, then drains open connections.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = if e.is_unreachable() {
            StatusCode::SERVICE_UNAVAILABLE
        } else {
            match &e {
                PipelineError::Validation(_) => StatusCode::BAD_REQUEST,
                PipelineError::Prompt(_) => StatusCode::UNPROCESSABLE_ENTITY,
                PipelineError::Generation(GatewayError::BackendError { .. })
                | PipelineError::Embedding(EmbedError::DimensionMismatch { .. }) => StatusCode::BAD_GATEWAY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            }
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<IndexingError> for ApiError {
    fn from(e: IndexingError) -> Self {
        let status = match &e {
            IndexingError::Corpus(CorpusError::PathNotFound(_)) => StatusCode::NOT_FOUND,
            IndexingError::Index(IndexError::Locked(_)) => StatusCode::CONFLICT,
            IndexingError::Embed(EmbedError::BackendUnreachable(_)) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid JSON body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct AskRequest {
    question: Option<String>,
    k: Option<i64>,
    session_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct AskResponse {
    answer: String,
    sources: Vec<SourceRef>,
    grounding_score: f64,
    grounded: bool,
    session_id: String,
    turn: usize,
    model_id: String,
    k: usize,
    latency_secs: f64,
}

async fn ask(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<AskResponse>, ApiError> {
    let req: AskRequest = parse_body(&body)?;
    let question = req.question.unwrap_or_default();
    if question.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "question is missing or empty"));
    }
    let k = match req.k {
        Some(k) if k < 0 => {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "k must be non-negative"));
        }
        Some(k) => Some(k as usize),
        None => None,
    };
    let handle = match &req.session_id {
        Some(id) => state
            .sessions
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))?,
        None => state.sessions.create(k.unwrap_or(state.default_k)),
    };
    blocking(move || {
        let mut session = handle.lock().expect("session poisoned");
        let k = k.unwrap_or(session.k_default);
        let answer = state.engine.ask(&question, k)?;
        let turn = state.sessions.record(&mut session, question, answer.clone());
        Ok(Json(AskResponse {
            answer: answer.text,
            sources: answer.sources,
            grounding_score: answer.grounding_score,
            grounded: answer.grounded,
            session_id: session.session_id.clone(),
            turn,
            model_id: answer.model_id,
            k,
            latency_secs: answer.latency_secs,
        }))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct IngestRequest {
    path: Option<String>,
}

#[derive(Debug, Serialize)]
struct IngestFailureView {
    file: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct IngestResponse {
    documents_added: usize,
    documents_seen: usize,
    chunks_indexed: usize,
    failures: Vec<IngestFailureView>,
}

/// Failure text without the server-side directory layout.
fn failure_reason(e: &CorpusError) -> String {
    match e {
        CorpusError::Io { source, .. } => source.to_string(),
        CorpusError::UnsupportedFile(_) => "unsupported file type".into(),
        CorpusError::PathNotFound(_) => "not found".into(),
        other => other.to_string(),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<IngestResponse>, ApiError> {
    let req: IngestRequest = parse_body(&body)?;
    let path = PathBuf::from(
        req.path
            .filter(|p| !p.trim().is_empty())
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "path is missing"))?,
    );
    if !path.exists() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "path not found"));
    }
    blocking(move || {
        let busy = || ApiError::new(StatusCode::CONFLICT, "index is being updated by another writer");
        let _lock = match &state.index_dir {
            Some(dir) => Some(IndexLock::acquire(dir).map_err(|e| match e {
                IndexError::Locked(_) => busy(),
                other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
            })?),
            None => None,
        };
        let outcome = state.engine.index.try_update(|index| {
            let mut store = state.store.lock().expect("store poisoned");
            let summary = ingest_into(
                &path,
                &mut store,
                index,
                &*state.engine.embedder,
                &state.engine.options.chunking,
            )?;
            if let Some(dir) = &state.index_dir {
                index.save(dir).map_err(IndexingError::from)?;
            }
            Ok::<_, IndexingError>(summary)
        });
        let summary = outcome.ok_or_else(busy)??;
        tracing::info!(
            added = summary.documents_added,
            chunks = summary.chunks_indexed,
            failed = summary.failures.len(),
            "ingest finished"
        );
        Ok(Json(IngestResponse {
            documents_added: summary.documents_added,
            documents_seen: summary.documents_seen,
            chunks_indexed: summary.chunks_indexed,
            failures: summary
                .failures
                .iter()
                .map(|f| IngestFailureView {
                    file: file_name(&f.path),
                    error: failure_reason(&f.error),
                })
                .collect(),
        }))
    })
    .await
}

#[derive(Debug, Serialize)]
struct ChunkResponse {
    chunk_id: String,
    doc_id: String,
    doc_title: String,
    text: String,
    char_start: usize,
    char_end: usize,
    page_hint: usize,
    /// False for chunks that retrieval skips, e.g. bibliography.
    retrievable: bool,
}

async fn chunk(
    State(state): State<Arc<AppState>>,
    UrlPath(chunk_id): UrlPath<String>,
) -> Result<Json<ChunkResponse>, ApiError> {
    let index = state.engine.index.snapshot();
    let c = index
        .chunk(&chunk_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown chunk {chunk_id}")))?;
    Ok(Json(ChunkResponse {
        chunk_id: c.chunk_id.clone(),
        doc_id: c.doc_id.clone(),
        doc_title: c.doc_title.clone(),
        text: c.text.clone(),
        char_start: c.char_start,
        char_end: c.char_end,
        page_hint: c.page_hint,
        retrievable: eligible(c, &state.engine.options.chunking),
    }))
}

async fn session(
    State(state): State<Arc<AppState>>,
    UrlPath(session_id): UrlPath<String>,
) -> Result<Json<Session>, ApiError> {
    let handle = state
        .sessions
        .get(&session_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {session_id}")))?;
    let snapshot = handle.lock().expect("session poisoned").clone();
    Ok(Json(snapshot))
}

#[derive(Debug, Serialize)]
struct HealthResponse {
    status: &'static str,
    index_size: usize,
    embedder_backend: &'static str,
    llm_backend: &'static str,
    model_id: String,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok",
        index_size: state.engine.index.snapshot().len(),
        embedder_backend: state.engine.embedder.backend_name(),
        llm_backend: state.engine.gateway.backend_name(),
        model_id: state.engine.model_id().to_string(),
    })
}
