//! Filtered top-k similarity search over chunk embeddings.
//!
//! Three backends share the [`VectorIndex`] contract: [`ExactIndex`] (brute
//! force, the reference), [`HnswIndex`] (approximate), and [`RemoteIndex`]
//! (HTTP client for an index hosted elsewhere). Filters restrict the
//! candidate set before ranking.

mod exact;
mod hnsw;
mod remote;
mod snapshot;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;
use crate::ingest::DocId;

pub use exact::ExactIndex;
pub use hnsw::{HnswIndex, HnswParams};
pub use remote::{remote_router, RemoteIndex};
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndexError {
    #[error("dimension mismatch: index has dim {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("chunk {doc_id}:{chunk_id} is already indexed")]
    DuplicateChunk { doc_id: String, chunk_id: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("remote index unavailable: {reason}")]
    Unavailable { reason: String },
    #[error("snapshot error: {reason}")]
    Snapshot { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Exact,
    Hnsw,
    Remote,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Exact => "exact",
            BackendKind::Hnsw => "hnsw",
            BackendKind::Remote => "remote",
        }
    }
}

/// An item as handed to `upsert`.
#[derive(Debug, Clone, PartialEq)]
pub struct NewItem {
    pub doc_id: DocId,
    pub chunk_id: String,
    pub vector: EmbeddingVector,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedItem {
    pub item_id: u64,
    pub doc_id: DocId,
    pub chunk_id: String,
    pub vector: EmbeddingVector,
    pub metadata: BTreeMap<String, String>,
}

/// Conjunction of `key = value` predicates. `doc_id` and `chunk_id` are
/// filterable alongside the metadata map; the empty filter matches all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetadataFilter(pub BTreeMap<String, String>);

impl MetadataFilter {
    pub fn all() -> Self {
        MetadataFilter::default()
    }

    pub fn doc(doc_id: &DocId) -> Self {
        MetadataFilter::all().and("doc_id", doc_id.as_str())
    }

    pub fn and(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn matches(&self, item: &IndexedItem) -> bool {
        self.0.iter().all(|(k, v)| match k.as_str() {
            "doc_id" => item.doc_id.as_str() == v,
            "chunk_id" => &item.chunk_id == v,
            _ => item.metadata.get(k) == Some(v),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub item_id: u64,
    pub score: f64,
    pub doc_id: DocId,
    pub chunk_id: String,
}

impl Hit {
    fn of(item: &IndexedItem, score: f64) -> Self {
        Hit {
            item_id: item.item_id,
            score,
            doc_id: item.doc_id.clone(),
            chunk_id: item.chunk_id.clone(),
        }
    }
}

/// Descending score, then ascending item id.
pub fn rank_order(a: &Hit, b: &Hit) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.item_id.cmp(&b.item_id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBackendSpec {
    pub kind: BackendKind,
    pub dim: usize,
    #[serde(default)]
    pub hnsw: HnswParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
}

impl IndexBackendSpec {
    pub fn exact(dim: usize) -> Self {
        IndexBackendSpec {
            kind: BackendKind::Exact,
            dim,
            hnsw: HnswParams::default(),
            endpoint: None,
            auth_env_var: None,
        }
    }

    pub fn hnsw(dim: usize) -> Self {
        IndexBackendSpec {
            kind: BackendKind::Hnsw,
            ..IndexBackendSpec::exact(dim)
        }
    }

    pub fn remote(dim: usize, endpoint: impl Into<String>) -> Self {
        IndexBackendSpec {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            ..IndexBackendSpec::exact(dim)
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            BackendKind::Exact => "Exact".to_string(),
            BackendKind::Hnsw => format!(
                "HNSW (M={}, ef_search={})",
                self.hnsw.m, self.hnsw.ef_search
            ),
            BackendKind::Remote => "Remote".to_string(),
        }
    }
}

pub trait VectorIndex: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn dim(&self) -> usize;

    /// Number of live items.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert items; ids are assigned in argument order. All-or-nothing.
    fn upsert(&mut self, items: Vec<NewItem>) -> Result<Vec<u64>, IndexError>;

    /// At most `k` hits satisfying `filter`, ordered by [`rank_order`].
    /// An empty index or an unmatched filter yields an empty list.
    fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: &MetadataFilter,
    ) -> Result<Vec<Hit>, IndexError>;

    fn delete_document(&mut self, doc_id: &DocId) -> Result<usize, IndexError>;

    fn contains_document(&self, doc_id: &DocId) -> Result<bool, IndexError>;

    /// Live items in ascending id order plus the next id to assign.
    fn export(&self) -> Result<(Vec<IndexedItem>, u64), IndexError>;
}

/// Shared handle: many readers or one writer.
pub type SharedIndex = Arc<RwLock<Box<dyn VectorIndex>>>;

pub fn build_index(spec: &IndexBackendSpec) -> Result<Box<dyn VectorIndex>, IndexError> {
    if spec.dim == 0 {
        return Err(IndexError::DimensionMismatch { expected: 1, got: 0 });
    }
    Ok(match spec.kind {
        BackendKind::Exact => Box::new(ExactIndex::new(spec.dim)),
        BackendKind::Hnsw => Box::new(HnswIndex::new(spec.dim, spec.hnsw.clone())),
        BackendKind::Remote => Box::new(RemoteIndex::new(spec)?),
    })
}

pub fn shared(index: Box<dyn VectorIndex>) -> SharedIndex {
    Arc::new(RwLock::new(index))
}

/// Id assignment and upsert validation shared by the local backends.
#[derive(Debug, Clone, Default)]
pub(crate) struct Registry {
    pub dim: usize,
    pub next_id: u64,
    keys: HashSet<(DocId, String)>,
}

impl Registry {
    pub fn new(dim: usize) -> Self {
        Registry {
            dim,
            next_id: 0,
            keys: HashSet::new(),
        }
    }

    pub fn check_query(&self, query: &EmbeddingVector, k: usize) -> Result<(), IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        Ok(())
    }

    /// Validate a batch and turn it into items with fresh ids.
    pub fn admit(&mut self, items: Vec<NewItem>) -> Result<Vec<IndexedItem>, IndexError> {
        let mut batch_keys = HashSet::new();
        for it in &items {
            if it.vector.dim() != self.dim {
                return Err(IndexError::DimensionMismatch {
                    expected: self.dim,
                    got: it.vector.dim(),
                });
            }
            let key = (it.doc_id.clone(), it.chunk_id.clone());
            if self.keys.contains(&key) || !batch_keys.insert(key) {
                return Err(IndexError::DuplicateChunk {
                    doc_id: it.doc_id.to_string(),
                    chunk_id: it.chunk_id.clone(),
                });
            }
        }
        self.keys.extend(batch_keys);
        Ok(items
            .into_iter()
            .map(|it| {
                let item_id = self.next_id;
                self.next_id += 1;
                IndexedItem {
                    item_id,
                    doc_id: it.doc_id,
                    chunk_id: it.chunk_id,
                    vector: it.vector,
                    metadata: it.metadata,
                }
            })
            .collect())
    }

    /// Re-admit an item with a known id (snapshot restore).
    pub fn restore(&mut self, item: &IndexedItem) -> Result<(), IndexError> {
        if item.vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: item.vector.dim(),
            });
        }
        if !self.keys.insert((item.doc_id.clone(), item.chunk_id.clone())) {
            return Err(IndexError::DuplicateChunk {
                doc_id: item.doc_id.to_string(),
                chunk_id: item.chunk_id.clone(),
            });
        }
        self.next_id = self.next_id.max(item.item_id + 1);
        Ok(())
    }

    pub fn forget(&mut self, doc_id: &DocId, chunk_id: &str) {
        self.keys.remove(&(doc_id.clone(), chunk_id.to_string()));
    }
}
