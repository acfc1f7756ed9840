//! In-process mock of the three agent services, serving fixture bodies
//! verbatim. Faults can be injected per agent.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use parking_lot::RwLock;
use serde_json::json;

use super::AgentKind;

#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    /// Answer 503.
    Down,
    /// Sleep before answering normally.
    Delay(Duration),
    /// Answer 200 with a body that is not JSON.
    Malformed,
}

#[derive(Debug, Default)]
pub struct MockAgentState {
    fixtures: RwLock<HashMap<(AgentKind, String), Vec<u8>>>,
    faults: RwLock<HashMap<AgentKind, Fault>>,
    hits: AtomicUsize,
}

impl MockAgentState {
    pub fn new() -> Self {
        MockAgentState::default()
    }

    pub fn insert(&self, kind: AgentKind, id: impl Into<String>, body: impl Into<Vec<u8>>) {
        self.fixtures.write().insert((kind, id.into()), body.into());
    }

    pub fn insert_json(&self, kind: AgentKind, id: impl Into<String>, body: &serde_json::Value) {
        self.insert(kind, id, body.to_string());
    }

    pub fn set_fault(&self, kind: AgentKind, fault: Option<Fault>) {
        let mut faults = self.faults.write();
        match fault {
            Some(f) => faults.insert(kind, f),
            None => faults.remove(&kind),
        };
    }

    pub fn fixture_count(&self) -> usize {
        self.fixtures.read().len()
    }

    /// Requests served so far, faults included.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Read `<dir>/{pdm,xai,iot}/<id>.json`. Missing kind directories are fine.
pub fn load_fixtures(dir: &Path) -> std::io::Result<MockAgentState> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("fixture directory {} not found", dir.display()),
        ));
    }
    let state = MockAgentState::new();
    for kind in AgentKind::ALL {
        let sub = dir.join(kind.as_str());
        if !sub.is_dir() {
            continue;
        }
        let mut entries: Vec<_> = std::fs::read_dir(&sub)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if path.extension().and_then(|x| x.to_str()) != Some("json") {
                continue;
            }
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                state.insert(kind, id, std::fs::read(&path)?);
            }
        }
    }
    Ok(state)
}

async fn serve_fixture(
    State(state): State<Arc<MockAgentState>>,
    UrlPath((kind, id)): UrlPath<(String, String)>,
) -> Response {
    state.hits.fetch_add(1, Ordering::SeqCst);
    let Ok(kind) = kind.parse::<AgentKind>() else {
        return (StatusCode::NOT_FOUND, Json(json!({"error": "unknown agent"}))).into_response();
    };
    let fault = state.faults.read().get(&kind).cloned();
    match fault {
        Some(Fault::Down) => {
            return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "agent down"}))).into_response()
        }
        Some(Fault::Malformed) => return (StatusCode::OK, "<<not json>>").into_response(),
        Some(Fault::Delay(d)) => tokio::time::sleep(d).await,
        None => {}
    }
    let body = state.fixtures.read().get(&(kind, id.clone())).cloned();
    match body {
        Some(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        None => (
            StatusCode::NOT_FOUND,
            Json(json!({"error": "no fixture", "detail": format!("{kind}/{id}")})),
        )
            .into_response(),
    }
}

/// `GET /{pdm|xai|iot}/{id}`; query parameters such as `window_s` are
/// accepted and ignored.
pub fn mock_router(state: Arc<MockAgentState>) -> Router {
    Router::new()
        .route("/{kind}/{id}", get(serve_fixture))
        .with_state(state)
}
