//! HTTP service over the engine.
//!
//! | method | path                       | auth |
//! |--------|----------------------------|------|
//! | GET    | /v1/health                 | no   |
//! | POST   | /v1/documents              | key  |
//! | POST   | /v1/sessions               | key  |
//! | GET    | /v1/sessions/{id}          | key  |
//! | DELETE | /v1/sessions/{id}          | key  |
//! | POST   | /v1/sessions/{id}/query    | key  |
//! | GET    | /v1/tools                  | key  |
//!
//! Errors are `{"error": ..., "detail": ...}`. One JSON log line per
//! request goes to stdout.

pub mod auth;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use auth::{
    append_new_key, generate_key, hash_key, read_records, ApiKeyRecord, KeyError, KeyStore, API_KEY_HEADER,
};

use crate::agents::AgentKind;
use crate::chunker::{ChunkStrategy, ChunkerConfig};
use crate::config::ServiceConfig;
use crate::embed::EmbedError;
use crate::engine::{AnswerOptions, Engine, EngineError, EngineParts, IngestOptions, IngestReport};
use crate::index::IndexError;
use crate::ingest::{DocumentMeta, SourceFormat};
use crate::llm::LlmError;
use crate::router::{RouterError, Session, ToolSpec};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Keys(#[from] KeyError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: Option<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.into(),
                detail,
            },
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed request", Some(detail.into()))
    }

    /// Keeps the status of an extractor rejection (400, 413, 415, 422).
    fn rejection(status: StatusCode, detail: String) -> Self {
        let error = match status {
            StatusCode::PAYLOAD_TOO_LARGE => "payload too large",
            StatusCode::UNPROCESSABLE_ENTITY => "unprocessable request",
            StatusCode::UNSUPPORTED_MEDIA_TYPE => "unsupported media type",
            _ => "malformed request",
        };
        ApiError::new(status, error, Some(detail))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let detail = Some(e.to_string());
        let (status, error) = match &e {
            EngineError::EmptyQuery => (StatusCode::UNPROCESSABLE_ENTITY, "query text must not be empty"),
            _ if e.is_unknown_session() => (StatusCode::NOT_FOUND, "unknown session"),
            _ if e.is_provider_unavailable() => (StatusCode::SERVICE_UNAVAILABLE, "llm provider unavailable"),
            EngineError::Embed(EmbedError::EmptyText { .. }) => (StatusCode::BAD_REQUEST, "malformed request"),
            EngineError::Embed(_) => (StatusCode::BAD_GATEWAY, "embedding provider failure"),
            EngineError::Index(IndexError::Unavailable { .. }) => (StatusCode::BAD_GATEWAY, "index unavailable"),
            EngineError::Llm(LlmError::BadResponse(_)) => (StatusCode::BAD_GATEWAY, "llm provider failure"),
            EngineError::Ingest(_) | EngineError::Chunk(_) | EngineError::Config(_) => {
                (StatusCode::BAD_REQUEST, "malformed request")
            }
            EngineError::Router(RouterError::EmptySummary | RouterError::UnknownDocument(_)) => {
                (StatusCode::BAD_REQUEST, "malformed request")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal error"),
        };
        if status.is_server_error() {
            tracing::warn!(status = status.as_u16(), error = %e, "request failed");
        }
        ApiError::new(status, error, detail)
    }
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub cors_origins: Vec<String>,
    pub max_body_bytes: usize,
    pub health_refresh: Duration,
    pub log_requests: bool,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            cors_origins: Vec::new(),
            max_body_bytes: crate::config::DEFAULT_MAX_BODY_BYTES,
            health_refresh: Duration::from_secs(crate::config::DEFAULT_HEALTH_REFRESH_S),
            log_requests: true,
        }
    }
}

impl ServiceOptions {
    pub fn from_config(cfg: &ServiceConfig) -> Self {
        ServiceOptions {
            cors_origins: cfg.cors_origins.clone(),
            max_body_bytes: cfg.max_body_bytes,
            health_refresh: Duration::from_secs(cfg.health_refresh_s),
            log_requests: true,
        }
    }
}

#[derive(Default)]
struct HealthCache {
    at: Option<Instant>,
    providers: BTreeMap<String, bool>,
    refreshing: bool,
}

struct AppState {
    engine: Arc<Engine>,
    keys: KeyStore,
    opts: ServiceOptions,
    health: Mutex<HealthCache>,
}

/// Authenticated key label, attached to responses for the request log.
#[derive(Debug, Clone)]
struct KeyLabel(String);

pub struct Service {
    state: Arc<AppState>,
}

impl Service {
    /// Probes providers once so the health cache starts filled.
    pub fn new(engine: Arc<Engine>, keys: KeyStore, opts: ServiceOptions) -> Self {
        let providers = engine.probe_providers();
        let state = Arc::new(AppState {
            engine,
            keys,
            opts,
            health: Mutex::new(HealthCache {
                at: Some(Instant::now()),
                providers,
                refreshing: false,
            }),
        });
        Service { state }
    }

    pub fn from_config(cfg: &ServiceConfig, parts: EngineParts) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let keys = match cfg.keys_path() {
            Some(p) => KeyStore::open(p)?,
            None => KeyStore::fixed(Vec::new()),
        };
        if keys.is_empty() {
            tracing::warn!("no API keys configured; every protected endpoint will answer 401");
        }
        let engine = Arc::new(Engine::open_with(cfg.engine.clone(), parts)?);
        Ok(Service::new(engine, keys, ServiceOptions::from_config(cfg)))
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.state.engine
    }

    pub fn router(&self) -> Router {
        let st = self.state.clone();
        let protected = Router::new()
            .route("/v1/documents", post(ingest_document))
            .route("/v1/sessions", post(create_session))
            .route("/v1/sessions/{id}", get(get_session).delete(delete_session))
            .route("/v1/sessions/{id}/query", post(query))
            .route("/v1/tools", get(list_tools))
            .route_layer(middleware::from_fn_with_state(st.clone(), require_key));
        let mut app = Router::new()
            .route("/v1/health", get(health))
            .merge(protected)
            .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not found", None) })
            .layer(DefaultBodyLimit::max(st.opts.max_body_bytes))
            .with_state(st.clone());
        if st.opts.log_requests {
            app = app.layer(middleware::from_fn(log_request));
        }
        if let Some(cors) = cors_layer(&st.opts.cors_origins) {
            app = app.layer(cors);
        }
        app
    }
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    Some(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(list))
            .allow_methods([Method::GET, Method::POST, Method::DELETE])
            .allow_headers([header::CONTENT_TYPE, HeaderName::from_static(API_KEY_HEADER)]),
    )
}

async fn require_key(State(st): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let presented = req
        .headers()
        .get(API_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    match st.keys.authenticate(presented) {
        Some(label) => {
            let mut resp = next.run(req).await;
            resp.extensions_mut().insert(KeyLabel(label));
            resp
        }
        None => ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", None).into_response(),
    }
}

#[derive(Serialize)]
struct RequestLog<'a> {
    ts: String,
    method: &'a str,
    path: &'a str,
    status: u16,
    latency_ms: f64,
    key: Option<&'a str>,
}

async fn log_request(req: Request, next: Next) -> Response {
    let started = Instant::now();
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let resp = next.run(req).await;
    let line = RequestLog {
        ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        method: method.as_str(),
        path: &path,
        status: resp.status().as_u16(),
        latency_ms: (started.elapsed().as_secs_f64() * 1000.0 * 1000.0).round() / 1000.0,
        key: resp.extensions().get::<KeyLabel>().map(|k| k.0.as_str()),
    };
    if let Ok(s) = serde_json::to_string(&line) {
        println!("{s}");
    }
    resp
}

/// Run blocking engine work off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, EngineError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal error", Some(e.to_string()))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub index_count: usize,
    pub providers: BTreeMap<String, bool>,
}

async fn health(State(st): State<Arc<AppState>>) -> Json<HealthResponse> {
    let providers = {
        let mut h = st.health.lock();
        let stale = h.at.is_none_or(|t| t.elapsed() >= st.opts.health_refresh);
        if stale && !h.refreshing {
            h.refreshing = true;
            let st2 = st.clone();
            tokio::task::spawn_blocking(move || {
                let fresh = st2.engine.probe_providers();
                let mut h = st2.health.lock();
                h.providers = fresh;
                h.at = Some(Instant::now());
                h.refreshing = false;
            });
        }
        h.providers.clone()
    };
    let status = if providers.values().all(|&ok| ok) { "ok" } else { "degraded" };
    Json(HealthResponse {
        status: status.into(),
        index_count: st.engine.index_count(),
        providers,
    })
}

fn default_format() -> SourceFormat {
    SourceFormat::Markdown
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    pub text: String,
    #[serde(default = "default_format")]
    pub format: SourceFormat,
    pub metadata: DocumentMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunker: Option<ChunkerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
}

struct IngestJob {
    raw: Vec<u8>,
    format: SourceFormat,
    meta: DocumentMeta,
    opts: IngestOptions,
}

fn is_multipart(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"))
}

async fn read_json_job(req: Request) -> Result<IngestJob, ApiError> {
    let body = Bytes::from_request(req, &())
        .await
        .map_err(|r| ApiError::rejection(r.status(), r.body_text()))?;
    let r: IngestRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid document JSON: {e}")))?;
    Ok(IngestJob {
        raw: r.text.into_bytes(),
        format: r.format,
        meta: r.metadata,
        opts: IngestOptions {
            chunker: r.chunker,
            summary: r.summary,
            keywords: r.keywords,
        },
    })
}

/// Multipart fields: `file` (or `text`), `metadata` (JSON) or the
/// individual `title`/`author`/`doc_type`/`version` fields, and optional
/// `format`, `strategy`, `max_chars`, `overlap_chars`, `summary`,
/// `keywords` (comma separated).
async fn read_multipart_job(req: Request) -> Result<IngestJob, ApiError> {
    let mut mp = Multipart::from_request(req, &())
        .await
        .map_err(|r: MultipartRejection| ApiError::rejection(r.status(), r.body_text()))?;
    let mut raw: Option<Vec<u8>> = None;
    let mut filename: Option<String> = None;
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    loop {
        let field = match mp.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Err(ApiError::rejection(e.status(), e.body_text())),
        };
        let name = field.name().unwrap_or("").to_string();
        if name == "file" {
            filename = field.file_name().map(str::to_string);
        }
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::rejection(e.status(), e.body_text()))?;
        match name.as_str() {
            "file" | "text" => raw = Some(data.to_vec()),
            other => {
                let text = String::from_utf8(data.to_vec())
                    .map_err(|_| ApiError::bad_request(format!("field '{other}' is not UTF-8")))?;
                fields.insert(other.to_string(), text);
            }
        }
    }
    let raw = raw.ok_or_else(|| ApiError::bad_request("missing 'file' or 'text' field"))?;

    let mut meta = match fields.get("metadata") {
        Some(m) => serde_json::from_str::<DocumentMeta>(m)
            .map_err(|e| ApiError::bad_request(format!("invalid metadata: {e}")))?,
        None => DocumentMeta::titled(fields.get("title").cloned().unwrap_or_default()),
    };
    for (key, slot) in [
        ("author", &mut meta.author),
        ("doc_type", &mut meta.doc_type),
        ("version", &mut meta.version),
    ] {
        if let Some(v) = fields.get(key) {
            *slot = v.clone();
        }
    }
    let format = match (fields.get("format"), &filename) {
        (Some(f), _) => f.parse().map_err(ApiError::bad_request)?,
        (None, Some(name)) => SourceFormat::from_extension(name.rsplit('.').next().unwrap_or("")),
        (None, None) => SourceFormat::Markdown,
    };
    let num = |k: &str| -> Result<Option<usize>, ApiError> {
        fields
            .get(k)
            .map(|v| v.trim().parse().map_err(|_| ApiError::bad_request(format!("'{k}' must be a number"))))
            .transpose()
    };
    let chunker = match fields.get("strategy").map(String::as_str) {
        None => None,
        Some(s) => {
            let strategy = match s {
                "semantic" => ChunkStrategy::Semantic,
                "fixed" => ChunkStrategy::Fixed,
                o => return Err(ApiError::bad_request(format!("unknown strategy '{o}'"))),
            };
            let max = num("max_chars")?.unwrap_or(ChunkerConfig::default().max_chars);
            let overlap = num("overlap_chars")?.unwrap_or(0);
            Some(ChunkerConfig::new(strategy, max, overlap).map_err(|e| ApiError::bad_request(e.to_string()))?)
        }
    };
    Ok(IngestJob {
        raw,
        format,
        meta,
        opts: IngestOptions {
            chunker,
            summary: fields.get("summary").cloned(),
            keywords: fields
                .get("keywords")
                .map(|k| k.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
        },
    })
}

async fn ingest_document(
    State(st): State<Arc<AppState>>,
    req: Request,
) -> Result<(StatusCode, Json<IngestReport>), ApiError> {
    let job = if is_multipart(req.headers()) {
        read_multipart_job(req).await?
    } else {
        read_json_job(req).await?
    };
    let engine = st.engine.clone();
    let report = blocking(move || engine.ingest(&job.raw, job.format, &job.meta, &job.opts)).await?;
    Ok((StatusCode::CREATED, Json(report)))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ApiError> {
    let req: CreateSessionRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSessionRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let engine = st.engine.clone();
    let s = blocking(move || engine.create_session(req.system_prompt.as_deref())).await?;
    Ok((
        StatusCode::CREATED,
        Json(CreateSessionResponse {
            session_id: s.session_id,
            created_at: s.created_at,
        }),
    ))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    let engine = st.engine.clone();
    Ok(Json(blocking(move || engine.get_session(&id)).await?))
}

async fn delete_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let engine = st.engine.clone();
    blocking(move || engine.delete_session(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub agent_ids: BTreeMap<AgentKind, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationOut {
    pub doc_id: String,
    pub chunk_id: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFailureOut {
    pub agent: AgentKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingOut {
    pub policy: crate::router::RoutingPolicy,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub answer: String,
    pub citations: Vec<CitationOut>,
    pub agents_used: Vec<AgentKind>,
    pub tools_used: Vec<String>,
    pub latency_ms: u64,
    pub refused: bool,
    pub agent_failures: Vec<AgentFailureOut>,
    pub routing: RoutingOut,
    pub at: chrono::DateTime<chrono::Utc>,
}

async fn query(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let started = Instant::now();
    let Json(req) = body.map_err(|r| ApiError::rejection(r.status(), r.body_text()))?;
    let engine = st.engine.clone();
    let opts = AnswerOptions {
        agent_ids: req.agent_ids,
    };
    let out = blocking(move || engine.answer(&id, &req.text, &opts)).await?;
    let citations = out
        .turn
        .citations
        .iter()
        .map(|c| CitationOut {
            doc_id: c.doc_id.to_string(),
            chunk_id: c.chunk_id.clone(),
            title: out
                .context
                .iter()
                .find(|e| e.doc_id == c.doc_id.as_str() && e.chunk_id == c.chunk_id)
                .map(|e| e.title.clone())
                .unwrap_or_default(),
        })
        .collect();
    Ok(Json(QueryResponse {
        answer: out.turn.text,
        citations,
        agents_used: out.agents_used,
        tools_used: out.tools_used,
        latency_ms: started.elapsed().as_millis() as u64,
        refused: out.refused,
        agent_failures: out
            .agent_failures
            .into_iter()
            .map(|(agent, reason)| AgentFailureOut { agent, reason })
            .collect(),
        routing: RoutingOut {
            policy: out.decision.policy,
            rationale: out.decision.rationale,
        },
        at: out.turn.at,
    }))
}

async fn list_tools(State(st): State<Arc<AppState>>) -> Json<Vec<ToolSpec>> {
    Json(st.engine.tools())
}

/// Resolves on SIGINT or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Serve until SIGINT/SIGTERM.
pub fn run(cfg: &ServiceConfig, parts: EngineParts) -> Result<(), ServiceError> {
    let service = Service::from_config(cfg, parts)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.bind).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, service.router())
            .with_graceful_shutdown(shutdown_signal())
            .await?;
        Ok::<_, ServiceError>(())
    })
}
