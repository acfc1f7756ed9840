//! HTTP+JSON index backend and a router that hosts any local index behind
//! the same wire protocol.
//!
//! * `POST /upsert` `{items: [{doc_id, chunk_id, vector, provider_id, metadata}]}` → `{item_ids}`
//! * `POST /query` `{vector, k, filter}` → `{hits}`
//! * `DELETE /docs/{doc_id}` → `{removed}`
//! * `GET /stats` → `{count, dim}`
//!
//! Errors come back as `{error, detail}` where `detail` is the serialized
//! [`IndexError`].

use std::collections::BTreeMap;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    BackendKind, Hit, IndexBackendSpec, IndexError, IndexedItem, MetadataFilter, NewItem,
    SharedIndex, VectorIndex,
};
use crate::embed::EmbeddingVector;
use crate::ingest::DocId;

#[derive(Debug, Serialize, Deserialize)]
struct WireItem {
    doc_id: String,
    chunk_id: String,
    vector: Vec<f32>,
    #[serde(default)]
    provider_id: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct UpsertRequest {
    items: Vec<WireItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct UpsertResponse {
    item_ids: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRequest {
    vector: Vec<f32>,
    k: usize,
    #[serde(default)]
    filter: MetadataFilter,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryResponse {
    hits: Vec<Hit>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DeleteResponse {
    removed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsResponse {
    count: usize,
    dim: usize,
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    detail: Option<IndexError>,
    error: Option<String>,
}

/// Client for a remotely hosted index.
pub struct RemoteIndex {
    base: String,
    dim: usize,
    agent: ureq::Agent,
    auth: Option<String>,
}

impl std::fmt::Debug for RemoteIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteIndex").field("base", &self.base).field("dim", &self.dim).finish()
    }
}

fn unavailable(reason: impl Into<String>) -> IndexError {
    IndexError::Unavailable { reason: reason.into() }
}

impl RemoteIndex {
    pub fn new(spec: &IndexBackendSpec) -> Result<Self, IndexError> {
        let base = spec
            .endpoint
            .clone()
            .ok_or_else(|| unavailable("remote backend needs an endpoint"))?;
        let auth = match &spec.auth_env_var {
            Some(var) => Some(format!(
                "Bearer {}",
                std::env::var(var).map_err(|_| unavailable(format!("environment variable {var} is not set")))?
            )),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(3))
            .timeout(Duration::from_secs(30))
            .build();
        Ok(RemoteIndex {
            base: base.trim_end_matches('/').to_string(),
            dim: spec.dim,
            agent,
            auth,
        })
    }

    fn call<T: for<'de> Deserialize<'de>>(
        &self,
        method: &str,
        path: &str,
        body: Option<serde_json::Value>,
    ) -> Result<T, IndexError> {
        let mut req = self.agent.request(method, &format!("{}{}", self.base, path));
        if let Some(a) = &self.auth {
            req = req.set("Authorization", a);
        }
        let resp = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        match resp {
            Ok(r) => r.into_json().map_err(|e| unavailable(format!("bad response: {e}"))),
            Err(ureq::Error::Status(code, r)) => {
                let body: Option<ErrorBody> = r.into_json().ok();
                match body {
                    Some(ErrorBody { detail: Some(e), .. }) => Err(e),
                    Some(ErrorBody { error: Some(msg), .. }) => Err(unavailable(format!("HTTP {code}: {msg}"))),
                    _ => Err(unavailable(format!("HTTP {code}"))),
                }
            }
            Err(ureq::Error::Transport(t)) => Err(unavailable(t.to_string())),
        }
    }
}

impl VectorIndex for RemoteIndex {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.call::<StatsResponse>("GET", "/stats", None)
            .map(|s| s.count)
            .unwrap_or(0)
    }

    fn upsert(&mut self, items: Vec<NewItem>) -> Result<Vec<u64>, IndexError> {
        if let Some(bad) = items.iter().find(|it| it.vector.dim() != self.dim) {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: bad.vector.dim(),
            });
        }
        let req = UpsertRequest {
            items: items
                .into_iter()
                .map(|it| WireItem {
                    doc_id: it.doc_id.0,
                    chunk_id: it.chunk_id,
                    provider_id: it.vector.provider_id().to_string(),
                    vector: it.vector.into_values(),
                    metadata: it.metadata,
                })
                .collect(),
        };
        let body = serde_json::to_value(req).expect("serializable");
        Ok(self.call::<UpsertResponse>("POST", "/upsert", Some(body))?.item_ids)
    }

    fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: &MetadataFilter,
    ) -> Result<Vec<Hit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let body = json!({"vector": query.values(), "k": k, "filter": filter});
        Ok(self.call::<QueryResponse>("POST", "/query", Some(body))?.hits)
    }

    fn delete_document(&mut self, doc_id: &DocId) -> Result<usize, IndexError> {
        let path = format!("/docs/{}", doc_id.as_str());
        Ok(self.call::<DeleteResponse>("DELETE", &path, None)?.removed)
    }

    fn contains_document(&self, doc_id: &DocId) -> Result<bool, IndexError> {
        // any unit vector works as a probe once the filter pins the document
        let mut probe = vec![0.0f32; self.dim];
        probe[0] = 1.0;
        let probe = EmbeddingVector::from_unit(probe, "probe").expect("unit vector");
        Ok(!self.top_k(&probe, 1, &MetadataFilter::doc(doc_id))?.is_empty())
    }

    fn export(&self) -> Result<(Vec<IndexedItem>, u64), IndexError> {
        Err(unavailable("remote indexes are persisted by their host, not snapshotted locally"))
    }
}

struct ApiError(StatusCode, IndexError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1.to_string(), "detail": self.1}))).into_response()
    }
}

impl From<IndexError> for ApiError {
    fn from(e: IndexError) -> Self {
        let status = match e {
            IndexError::Unavailable { .. } | IndexError::Snapshot { .. } => StatusCode::BAD_GATEWAY,
            IndexError::DuplicateChunk { .. } => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e)
    }
}

async fn upsert_handler(
    State(index): State<SharedIndex>,
    Json(req): Json<UpsertRequest>,
) -> Result<Json<UpsertResponse>, ApiError> {
    let mut items = Vec::with_capacity(req.items.len());
    for it in req.items {
        let provider = if it.provider_id.is_empty() { "remote".to_string() } else { it.provider_id };
        let vector = EmbeddingVector::from_unit(it.vector, provider)
            .map_err(|_| IndexError::DimensionMismatch { expected: index.read().dim(), got: 0 })?;
        items.push(NewItem {
            doc_id: DocId(it.doc_id),
            chunk_id: it.chunk_id,
            vector,
            metadata: it.metadata,
        });
    }
    let item_ids = index.write().upsert(items)?;
    Ok(Json(UpsertResponse { item_ids }))
}

async fn query_handler(
    State(index): State<SharedIndex>,
    Json(req): Json<QueryRequest>,
) -> Result<Json<QueryResponse>, ApiError> {
    let q = EmbeddingVector::from_unit(req.vector, "query")
        .map_err(|_| IndexError::DimensionMismatch { expected: index.read().dim(), got: 0 })?;
    let hits = index.read().top_k(&q, req.k, &req.filter)?;
    Ok(Json(QueryResponse { hits }))
}

async fn delete_handler(
    State(index): State<SharedIndex>,
    Path(doc_id): Path<String>,
) -> Result<Json<DeleteResponse>, ApiError> {
    let removed = index.write().delete_document(&DocId(doc_id))?;
    Ok(Json(DeleteResponse { removed }))
}

async fn stats_handler(State(index): State<SharedIndex>) -> Json<StatsResponse> {
    let idx = index.read();
    Json(StatsResponse {
        count: idx.len(),
        dim: idx.dim(),
    })
}

/// Serve `index` over the remote-backend wire protocol.
pub fn remote_router(index: SharedIndex) -> Router {
    Router::new()
        .route("/upsert", post(upsert_handler))
        .route("/query", post(query_handler))
        .route("/docs/{doc_id}", delete(delete_handler))
        .route("/stats", get(stats_handler))
        .with_state(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::BackgroundServer;
    use crate::index::test_support::items;
    use crate::index::{shared, ExactIndex};

    #[test]
    fn remote_matches_local_contract() {
        let hosted = shared(Box::new(ExactIndex::new(16)));
        let server = BackgroundServer::local(remote_router(hosted.clone())).unwrap();
        let mut client = RemoteIndex::new(&IndexBackendSpec::remote(16, server.url())).unwrap();

        let batch = items(30, 16, 8, 3);
        let q = batch[4].vector.clone();
        assert_eq!(client.upsert(batch[..3].to_vec()).unwrap(), vec![0, 1, 2]);
        client.upsert(batch[3..].to_vec()).unwrap();
        assert_eq!(client.len(), 30);
        assert!(matches!(
            client.upsert(batch[..1].to_vec()),
            Err(IndexError::DuplicateChunk { .. })
        ));

        let remote_hits = client.top_k(&q, 5, &MetadataFilter::all()).unwrap();
        let local_hits = hosted.read().top_k(&q, 5, &MetadataFilter::all()).unwrap();
        assert_eq!(remote_hits, local_hits);
        assert_eq!(remote_hits[0].item_id, 4);

        assert!(client.contains_document(&DocId("d1".into())).unwrap());
        assert_eq!(client.delete_document(&DocId("d1".into())).unwrap(), 10);
        assert!(!client.contains_document(&DocId("d1".into())).unwrap());
        assert_eq!(client.delete_document(&DocId("d1".into())).unwrap(), 0);
        assert!(client.export().is_err());
    }

    #[test]
    fn down_server_is_unavailable() {
        let url = format!("http://127.0.0.1:{}", crate::http::unused_port());
        let client = RemoteIndex::new(&IndexBackendSpec::remote(4, url)).unwrap();
        let q = EmbeddingVector::from_raw(vec![1.0, 0.0, 0.0, 0.0], "t").unwrap();
        assert!(matches!(
            client.top_k(&q, 1, &MetadataFilter::all()),
            Err(IndexError::Unavailable { .. })
        ));
    }
}
