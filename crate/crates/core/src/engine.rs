//! The chat engine: ingestion into the index and tool registry, and the
//! routed, cited answer pipeline over persistent sessions.
//!
//! Data directory layout:
//!
//! ```text
//! <data_dir>/index.fridx          local index snapshot
//! <data_dir>/embeddings.jsonl     embedding cache
//! <data_dir>/docs/<doc_id>.json   parsed document and its chunks
//! <data_dir>/tools.json           tool registry
//! <data_dir>/sessions/<id>.jsonl  session logs
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{extract_entity_id, AgentError, AgentHub, AgentKind, AgentRequest, AgentEndpointConfig};
use crate::chunker::{chunk_document, Chunk, ChunkError, ChunkerConfig};
use crate::embed::{EmbedError, Embedder, EmbeddingCache, EmbeddingProviderSpec};
use crate::index::{
    build_index, rank_order, read_snapshot, shared, write_snapshot, BackendKind, Hit, IndexBackendSpec, IndexError,
    MetadataFilter, NewItem, SharedIndex,
};
use crate::ingest::{parse_document, DocId, Document, DocumentMeta, IngestError, SourceFormat};
use crate::llm::{build_llm, LlmError, LlmProvider, LlmSpec};
use crate::router::{
    extract_citations, route_lexical, route_llm, AgentNote, Citation, ContextExcerpt, PromptTemplate, Role,
    RouterError, RoutingDecision, RoutingPolicy, Session, SessionStore, ToolRegistry, ToolSpec, Turn,
    DEFAULT_SYSTEM_PROMPT,
};
use crate::text::{content_terms, top_terms, truncate_chars};

pub const DEFAULT_REFUSAL: &str =
    "I could not find this in the registered documents or agent data, so I cannot answer it reliably.";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("query text must not be empty")]
    EmptyQuery,
    #[error("storage: {0}")]
    Storage(String),
}

impl EngineError {
    pub fn is_unknown_session(&self) -> bool {
        matches!(self, EngineError::Router(RouterError::UnknownSession(_)))
    }

    pub fn is_provider_unavailable(&self) -> bool {
        matches!(
            self,
            EngineError::Llm(LlmError::Unavailable { .. }) | EngineError::Router(RouterError::ProviderUnavailable(_))
        )
    }
}

fn default_true() -> bool {
    true
}

fn default_index() -> IndexBackendSpec {
    IndexBackendSpec::exact(crate::embed::TEST_DIM)
}

fn default_iot_window() -> u64 {
    3600
}

fn default_refusal() -> String {
    DEFAULT_REFUSAL.to_string()
}

fn default_k() -> usize {
    5
}

fn default_history() -> usize {
    6
}

fn default_system_prompt() -> String {
    DEFAULT_SYSTEM_PROMPT.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Persistence root; `None` keeps everything in memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub chunker: ChunkerConfig,
    #[serde(default = "EmbeddingProviderSpec::test_default")]
    pub embedding: EmbeddingProviderSpec,
    #[serde(default = "default_true")]
    pub embedding_cache: bool,
    #[serde(default = "default_index")]
    pub index: IndexBackendSpec,
    #[serde(default)]
    pub llm: LlmSpec,
    #[serde(default)]
    pub agents: Vec<AgentEndpointConfig>,
    #[serde(default = "default_iot_window")]
    pub iot_window_s: u64,
    #[serde(default)]
    pub routing: RoutingPolicy,
    #[serde(default = "default_true")]
    pub llm_routing_fallback: bool,
    #[serde(default = "default_true")]
    pub grounding_required: bool,
    #[serde(default = "default_refusal")]
    pub refusal_text: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_history")]
    pub history_window: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_system_prompt")]
    pub system_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            data_dir: None,
            chunker: ChunkerConfig::default(),
            embedding: EmbeddingProviderSpec::test_default(),
            embedding_cache: true,
            index: default_index(),
            llm: LlmSpec::default(),
            agents: Vec::new(),
            iot_window_s: default_iot_window(),
            routing: RoutingPolicy::default(),
            llm_routing_fallback: true,
            grounding_required: true,
            refusal_text: default_refusal(),
            k: default_k(),
            history_window: default_history(),
            temperature: 0.0,
            system_prompt: default_system_prompt(),
            prompt_template: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        self.chunker.validate()?;
        self.embedding.validate()?;
        if self.index.dim != self.embedding.dim {
            return bad(format!(
                "index dim {} does not match embedding dim {}",
                self.index.dim, self.embedding.dim
            ));
        }
        if self.index.kind == BackendKind::Remote && self.index.endpoint.is_none() {
            return bad("remote index needs an endpoint".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.refusal_text.trim().is_empty() {
            return bad("refusal_text must not be empty".into());
        }
        let mut seen = BTreeSet::new();
        for a in &self.agents {
            a.validate().map_err(|e| EngineError::Config(e.to_string()))?;
            if !seen.insert(a.agent) {
                return bad(format!("agent {} configured twice", a.agent));
            }
        }
        Ok(())
    }
}

/// A parsed document with its chunks, as stored beside the index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub document: Document,
    pub chunker: ChunkerConfig,
    pub chunks: Vec<Chunk>,
}

impl StoredDocument {
    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.chunk_id == chunk_id)
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub chunker: Option<ChunkerConfig>,
    pub summary: Option<String>,
    pub keywords: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub doc_id: DocId,
    pub chunk_count: usize,
    pub tool_id: String,
    pub replaced: bool,
}

/// Identifiers supplied with a query; they take precedence over `id:`
/// entities in the query text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOptions {
    #[serde(default)]
    pub agent_ids: BTreeMap<AgentKind, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerOutcome {
    pub turn: Turn,
    pub decision: RoutingDecision,
    pub tools_used: Vec<String>,
    pub agents_used: Vec<AgentKind>,
    pub agent_failures: Vec<(AgentKind, String)>,
    pub context: Vec<ContextExcerpt>,
    pub refused: bool,
}

/// Replacements for configured providers (tests, embedding hosts).
#[derive(Default)]
pub struct EngineParts {
    pub llm: Option<Arc<dyn LlmProvider>>,
    pub embedder: Option<Embedder>,
}

pub struct Engine {
    cfg: EngineConfig,
    embedder: Embedder,
    index: SharedIndex,
    docs: RwLock<BTreeMap<DocId, Arc<StoredDocument>>>,
    registry: RwLock<ToolRegistry>,
    sessions: SessionStore,
    llm: Arc<dyn LlmProvider>,
    agents: AgentHub,
    template: PromptTemplate,
    ingest_lock: Mutex<()>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("data_dir", &self.cfg.data_dir)
            .field("embedder", &self.embedder)
            .field("llm", &self.llm.id())
            .finish()
    }
}

fn storage(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Storage(format!("{}: {e}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| storage(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| storage(path, e))
}

/// Summary used when the caller supplies none: title, version and the
/// section outline (or the opening text when there are no headings).
pub fn auto_summary(doc: &Document, chunks: &[Chunk]) -> String {
    let mut s = format!("{} (version {}).", doc.title, doc.version);
    let mut sections: Vec<&str> = Vec::new();
    for c in chunks {
        if let Some(h) = c.heading_path.last() {
            if sections.last() != Some(&h.as_str()) && !sections.contains(&h.as_str()) {
                sections.push(h);
            }
        }
    }
    if sections.is_empty() {
        s.push(' ');
        s.push_str(&truncate_chars(&doc.body.split_whitespace().collect::<Vec<_>>().join(" "), 400));
    } else {
        s.push_str(" Sections: ");
        s.push_str(&sections.join("; "));
        s.push('.');
    }
    truncate_chars(&s, crate::router::MAX_SUMMARY_CHARS)
}

/// Keywords used when the caller supplies none: heading terms plus the most
/// frequent body terms.
pub fn auto_keywords(doc: &Document, chunks: &[Chunk]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    let headings = chunks.iter().flat_map(|c| c.heading_path.iter());
    for h in headings {
        for t in content_terms(h) {
            if seen.insert(t.clone()) {
                out.push(t);
            }
        }
    }
    for t in top_terms(&doc.body, 24) {
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

fn embedding_text(doc: &Document, chunk: &Chunk) -> String {
    let text = chunk.text.trim();
    let head = chunk.heading_path.join(" > ");
    match (head.is_empty(), text.is_empty()) {
        (_, true) if head.is_empty() => doc.title.clone(),
        (_, true) => head,
        (true, false) => text.to_string(),
        (false, false) => format!("{head}\n{text}"),
    }
}

impl Engine {
    pub fn open(cfg: EngineConfig) -> Result<Self, EngineError> {
        Engine::open_with(cfg, EngineParts::default())
    }

    pub fn open_with(cfg: EngineConfig, parts: EngineParts) -> Result<Self, EngineError> {
        cfg.validate()?;
        let data_dir = cfg.data_dir.clone();
        if let Some(d) = &data_dir {
            fs::create_dir_all(d.join("docs")).map_err(|e| storage(d, e))?;
        }

        let embedder = match parts.embedder {
            Some(e) => e,
            None => {
                let mut e = Embedder::from_spec(&cfg.embedding)?;
                if cfg.embedding_cache {
                    let cache = match &data_dir {
                        Some(d) => EmbeddingCache::open(d.join("embeddings.jsonl"))
                            .map_err(|err| storage(&d.join("embeddings.jsonl"), err))?,
                        None => EmbeddingCache::in_memory(),
                    };
                    e = e.with_cache(Arc::new(cache));
                }
                e
            }
        };
        if embedder.dim() != cfg.index.dim {
            return Err(EngineError::Config(format!(
                "embedder dim {} does not match index dim {}",
                embedder.dim(),
                cfg.index.dim
            )));
        }
        let llm = match parts.llm {
            Some(l) => l,
            None => build_llm(&cfg.llm)?,
        };
        let agents = AgentHub::new(&cfg.agents, cfg.iot_window_s).map_err(|e| EngineError::Config(e.to_string()))?;
        let template = match &cfg.prompt_template {
            Some(p) => PromptTemplate::load(p)?,
            None => PromptTemplate::default(),
        };
        let sessions = match &data_dir {
            Some(d) => SessionStore::open(d.join("sessions"))?,
            None => SessionStore::in_memory(),
        };

        let mut docs = BTreeMap::new();
        let mut registry = ToolRegistry::new();
        if let Some(d) = &data_dir {
            let docs_dir = d.join("docs");
            let mut paths: Vec<PathBuf> = fs::read_dir(&docs_dir)
                .map_err(|e| storage(&docs_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("json"))
                .collect();
            paths.sort();
            for p in paths {
                let raw = fs::read(&p).map_err(|e| storage(&p, e))?;
                let sd: StoredDocument = serde_json::from_slice(&raw).map_err(|e| storage(&p, e))?;
                docs.insert(sd.document.doc_id.clone(), Arc::new(sd));
            }
            let tools_path = d.join("tools.json");
            if tools_path.exists() {
                let raw = fs::read(&tools_path).map_err(|e| storage(&tools_path, e))?;
                let specs: Vec<ToolSpec> = serde_json::from_slice(&raw).map_err(|e| storage(&tools_path, e))?;
                for s in specs {
                    registry.restore(s);
                }
            }
        }

        let snapshot = data_dir.as_ref().map(|d| d.join("index.fridx"));
        let mut rebuild = false;
        let index = match (&snapshot, cfg.index.kind) {
            (Some(p), BackendKind::Exact | BackendKind::Hnsw) if p.exists() => {
                let idx = read_snapshot(p, &cfg.index.hnsw)?;
                if idx.dim() != cfg.index.dim || idx.kind() != cfg.index.kind {
                    return Err(EngineError::Config(format!(
                        "snapshot {} holds a {} index of dim {}, configuration asks for {} of dim {}",
                        p.display(),
                        idx.kind().as_str(),
                        idx.dim(),
                        cfg.index.kind.as_str(),
                        cfg.index.dim
                    )));
                }
                idx
            }
            (_, BackendKind::Remote) => build_index(&cfg.index)?,
            _ => {
                rebuild = !docs.is_empty();
                build_index(&cfg.index)?
            }
        };

        let engine = Engine {
            cfg,
            embedder,
            index: shared(index),
            docs: RwLock::new(docs),
            registry: RwLock::new(registry),
            sessions,
            llm,
            agents,
            template,
            ingest_lock: Mutex::new(()),
        };
        if rebuild {
            engine.reindex_stored()?;
        }
        Ok(engine)
    }

    fn reindex_stored(&self) -> Result<(), EngineError> {
        let docs: Vec<Arc<StoredDocument>> = self.docs.read().values().cloned().collect();
        for sd in docs {
            let items = self.embed_chunks(&sd.document, &sd.chunks)?;
            self.index.write().upsert(items)?;
        }
        self.persist_index()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn index(&self) -> &SharedIndex {
        &self.index
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn llm(&self) -> &Arc<dyn LlmProvider> {
        &self.llm
    }

    pub fn index_count(&self) -> usize {
        self.index.read().len()
    }

    pub fn tools(&self) -> Vec<ToolSpec> {
        self.registry.read().list().into_iter().cloned().collect()
    }

    pub fn document(&self, doc_id: &DocId) -> Option<Arc<StoredDocument>> {
        self.docs.read().get(doc_id).cloned()
    }

    pub fn document_ids(&self) -> Vec<DocId> {
        self.docs.read().keys().cloned().collect()
    }

    fn embed_chunks(&self, doc: &Document, chunks: &[Chunk]) -> Result<Vec<NewItem>, EngineError> {
        let texts: Vec<String> = chunks.iter().map(|c| embedding_text(doc, c)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = self.embedder.embed_batch(&refs)?;
        Ok(chunks
            .iter()
            .zip(vectors)
            .map(|(c, vector)| NewItem {
                doc_id: doc.doc_id.clone(),
                chunk_id: c.chunk_id.clone(),
                vector,
                metadata: BTreeMap::from([
                    ("title".to_string(), doc.title.clone()),
                    ("author".to_string(), doc.author.clone()),
                    ("doc_type".to_string(), doc.doc_type.clone()),
                    ("version".to_string(), doc.version.clone()),
                    ("heading_path".to_string(), c.heading_path.join(" > ")),
                ]),
            })
            .collect())
    }

    /// parse, chunk, embed, replace in the index, register the tool.
    pub fn ingest(
        &self,
        raw: &[u8],
        format: SourceFormat,
        meta: &DocumentMeta,
        opts: &IngestOptions,
    ) -> Result<IngestReport, EngineError> {
        let doc = parse_document(raw, format, meta)?;
        self.ingest_document(doc, opts)
    }

    /// [`Engine::ingest`] for an already parsed document.
    pub fn ingest_document(&self, doc: Document, opts: &IngestOptions) -> Result<IngestReport, EngineError> {
        let chunker = opts.chunker.clone().unwrap_or_else(|| self.cfg.chunker.clone());
        chunker.validate()?;
        let chunks = chunk_document(&doc, &chunker)?;
        let items = self.embed_chunks(&doc, &chunks)?;
        let summary = opts.summary.clone().unwrap_or_else(|| auto_summary(&doc, &chunks));
        let keywords = opts.keywords.clone().unwrap_or_else(|| auto_keywords(&doc, &chunks));

        let _serial = self.ingest_lock.lock();
        let replaced = {
            let mut idx = self.index.write();
            let removed = idx.delete_document(&doc.doc_id)?;
            idx.upsert(items)?;
            removed > 0
        };
        let stored = Arc::new(StoredDocument {
            document: doc.clone(),
            chunker,
            chunks,
        });
        let chunk_count = stored.chunks.len();
        self.docs.write().insert(doc.doc_id.clone(), stored.clone());
        let spec = {
            let idx = self.index.read();
            self.registry.write().register(&doc, &summary, &keywords, idx.as_ref())?
        };
        self.persist_document(&stored)?;
        self.persist_tools()?;
        self.persist_index()?;
        Ok(IngestReport {
            doc_id: doc.doc_id,
            chunk_count,
            tool_id: spec.tool_id,
            replaced,
        })
    }

    /// Remove a document, its chunks and its tool. Returns the chunks removed.
    pub fn remove_document(&self, doc_id: &DocId) -> Result<usize, EngineError> {
        let _serial = self.ingest_lock.lock();
        let removed = self.index.write().delete_document(doc_id)?;
        self.docs.write().remove(doc_id);
        self.registry.write().remove_document(doc_id);
        if let Some(d) = &self.cfg.data_dir {
            let p = d.join("docs").join(format!("{doc_id}.json"));
            if p.exists() {
                fs::remove_file(&p).map_err(|e| storage(&p, e))?;
            }
        }
        self.persist_tools()?;
        self.persist_index()?;
        Ok(removed)
    }

    fn persist_document(&self, sd: &StoredDocument) -> Result<(), EngineError> {
        let Some(d) = &self.cfg.data_dir else { return Ok(()) };
        let p = d.join("docs").join(format!("{}.json", sd.document.doc_id));
        let bytes = serde_json::to_vec(sd).map_err(|e| storage(&p, e))?;
        write_atomic(&p, &bytes)
    }

    fn persist_tools(&self) -> Result<(), EngineError> {
        let Some(d) = &self.cfg.data_dir else { return Ok(()) };
        let p = d.join("tools.json");
        let tools = self.tools();
        let bytes = serde_json::to_vec_pretty(&tools).map_err(|e| storage(&p, e))?;
        write_atomic(&p, &bytes)
    }

    fn persist_index(&self) -> Result<(), EngineError> {
        let Some(d) = &self.cfg.data_dir else { return Ok(()) };
        if let Some(cache) = self.embedder.cache() {
            cache.save().map_err(|e| storage(&d.join("embeddings.jsonl"), e))?;
        }
        if self.cfg.index.kind == BackendKind::Remote {
            return Ok(());
        }
        // exclusive: no reads or writes while the snapshot is taken
        let idx = self.index.write();
        write_snapshot(&d.join("index.fridx"), idx.as_ref())?;
        Ok(())
    }

    pub fn create_session(&self, system_prompt: Option<&str>) -> Result<Session, EngineError> {
        let prompt = system_prompt.unwrap_or(&self.cfg.system_prompt);
        Ok(self.sessions.create(prompt)?)
    }

    pub fn get_session(&self, session_id: &str) -> Result<Session, EngineError> {
        Ok(self.sessions.get(session_id)?)
    }

    pub fn delete_session(&self, session_id: &str) -> Result<(), EngineError> {
        Ok(self.sessions.delete(session_id)?)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.ids()
    }

    pub fn route(&self, query: &str, history: &[Turn]) -> Result<RoutingDecision, EngineError> {
        let registry = self.registry.read();
        Ok(match self.cfg.routing {
            RoutingPolicy::Lexical => route_lexical(query, &registry),
            RoutingPolicy::Llm => route_llm(
                query,
                &registry,
                history,
                self.llm.as_ref(),
                self.cfg.temperature,
                self.cfg.llm_routing_fallback,
            )?,
        })
    }

    /// Top-k over the whole index, or over one document.
    pub fn search(&self, query: &str, k: usize, doc: Option<&DocId>) -> Result<Vec<ContextExcerpt>, EngineError> {
        let q = self.embedder.embed_one(query)?;
        let filter = doc.map(MetadataFilter::doc).unwrap_or_else(MetadataFilter::all);
        let hits = self.index.read().top_k(&q, k, &filter)?;
        Ok(self.excerpts(hits))
    }

    fn excerpts(&self, mut hits: Vec<Hit>) -> Vec<ContextExcerpt> {
        hits.sort_by(rank_order);
        let docs = self.docs.read();
        let mut seen = BTreeSet::new();
        hits.into_iter()
            .filter(|h| seen.insert((h.doc_id.clone(), h.chunk_id.clone())))
            .filter_map(|h| {
                let sd = docs.get(&h.doc_id)?;
                let c = sd.chunk(&h.chunk_id)?;
                Some(ContextExcerpt {
                    doc_id: h.doc_id.to_string(),
                    chunk_id: h.chunk_id.clone(),
                    title: sd.document.title.clone(),
                    heading_path: c.heading_path.clone(),
                    text: c.text.clone(),
                    score: h.score,
                })
            })
            .collect()
    }

    /// Top-k per selected tool, restricted to that tool's document, merged
    /// in rank order.
    pub fn retrieve(&self, query: &str, tool_ids: &[String]) -> Result<Vec<ContextExcerpt>, EngineError> {
        if tool_ids.is_empty() {
            return Ok(Vec::new());
        }
        let doc_ids: Vec<DocId> = {
            let reg = self.registry.read();
            tool_ids
                .iter()
                .filter_map(|t| reg.get(t).map(|s| s.doc_id.clone()))
                .collect()
        };
        let q = self.embedder.embed_one(query)?;
        let mut hits: Vec<Hit> = Vec::new();
        {
            let idx = self.index.read();
            for d in &doc_ids {
                hits.extend(idx.top_k(&q, self.cfg.k, &MetadataFilter::doc(d))?);
            }
        }
        Ok(self.excerpts(hits))
    }

    /// Route, retrieve, consult agents, generate, cite, and append the
    /// user/assistant pair to the session.
    pub fn answer(&self, session_id: &str, query: &str, opts: &AnswerOptions) -> Result<AnswerOutcome, EngineError> {
        if query.trim().is_empty() {
            return Err(EngineError::EmptyQuery);
        }
        let handle = self.sessions.handle(session_id)?;
        let mut slot = handle.lock();
        if slot.is_deleted() {
            return Err(RouterError::UnknownSession(session_id.to_string()).into());
        }
        let history: Vec<Turn> = slot.session.recent(self.cfg.history_window).to_vec();

        let decision = self.route(query, &history)?;
        let context = self.retrieve(query, &decision.selected_tools)?;
        let tools_used = decision.selected_tools.clone();

        let entity = extract_entity_id(query);
        let requests: Vec<AgentRequest> = decision
            .selected_agents
            .iter()
            .filter_map(|&agent| {
                let id = opts.agent_ids.get(&agent).cloned().or_else(|| entity.clone())?;
                Some(AgentRequest { agent, id })
            })
            .collect();
        let mut notes = Vec::new();
        let mut agents_used = Vec::new();
        let mut agent_failures = Vec::new();
        for (agent, res) in self.agents.fetch_all(&requests) {
            match res {
                Ok(p) => {
                    agents_used.push(agent);
                    notes.push(AgentNote::Data(p.summary_text));
                }
                Err(e) => {
                    let reason = match &e {
                        AgentError::AgentUnavailable { reason, .. } | AgentError::BadPayload { reason, .. } => {
                            reason.clone()
                        }
                        AgentError::InvalidRequest(r) => r.clone(),
                    };
                    tracing::warn!(agent = %agent, error = %e, "agent skipped");
                    notes.push(AgentNote::Unavailable {
                        agent: agent.to_string(),
                        reason: reason.clone(),
                    });
                    agent_failures.push((agent, reason));
                }
            }
        }

        let mut tool_trace = tools_used.clone();
        tool_trace.extend(agents_used.iter().map(|a| a.to_string()));

        let refused = self.cfg.grounding_required && context.is_empty() && agents_used.is_empty();
        let (text, citations): (String, Vec<Citation>) = if refused {
            (self.cfg.refusal_text.clone(), Vec::new())
        } else {
            let system = if slot.session.system_prompt.trim().is_empty() {
                self.cfg.system_prompt.as_str()
            } else {
                slot.session.system_prompt.as_str()
            };
            let prompt = self.template.render(system, &history, &context, &notes, query);
            let reply = self.llm.complete(&prompt, self.cfg.temperature)?;
            let citations = extract_citations(&reply, &context);
            (reply, citations)
        };

        let user = Turn::user(query.trim());
        let assistant = Turn {
            role: Role::Assistant,
            text,
            citations,
            tool_trace,
            at: chrono::Utc::now(),
        };
        self.sessions.append(&mut slot, vec![user, assistant.clone()])?;
        Ok(AnswerOutcome {
            turn: assistant,
            decision,
            tools_used,
            agents_used,
            agent_failures,
            context,
            refused,
        })
    }

    /// Reachability of every configured provider, keyed `embedding:<id>`,
    /// `llm:<id>`, `index:<kind>` and `agent:<kind>`. Makes network calls.
    pub fn probe_providers(&self) -> BTreeMap<String, bool> {
        let mut m = BTreeMap::new();
        m.insert(format!("embedding:{}", self.embedder.provider_id()), self.embedder.probe());
        m.insert(format!("llm:{}", self.llm.id()), self.llm.probe());
        let index_ok = match (&self.cfg.index.kind, &self.cfg.index.endpoint) {
            (BackendKind::Remote, Some(url)) => crate::http::endpoint_reachable(url),
            _ => true,
        };
        m.insert(format!("index:{}", self.cfg.index.kind.as_str()), index_ok);
        m.extend(self.agents.reachability());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{mock_router, Fault, MockAgentState};
    use crate::http::BackgroundServer;
    use crate::llm::{ScriptedLlm, UnavailableLlm};

    const MANUAL: &str = "# Robot Arm Service Manual\n\n\
        ## Torque settings\n\nTighten the wrist flange bolts to 45 Nm in a star pattern.\n\n\
        ## Lubrication\n\nApply lithium grease to the elbow joint every 500 operating hours.\n";

    fn lexical() -> EngineConfig {
        EngineConfig {
            routing: RoutingPolicy::Lexical,
            ..EngineConfig::default()
        }
    }

    fn with_manual(cfg: EngineConfig, parts: EngineParts) -> (Engine, IngestReport) {
        let e = Engine::open_with(cfg, parts).unwrap();
        let r = e
            .ingest(
                MANUAL.as_bytes(),
                SourceFormat::Markdown,
                &DocumentMeta::titled("Robot Arm Service Manual"),
                &IngestOptions::default(),
            )
            .unwrap();
        (e, r)
    }

    #[test]
    fn exact_phrase_is_cited() {
        let (e, r) = with_manual(lexical(), EngineParts::default());
        assert!(r.chunk_count >= 2);
        let s = e.create_session(None).unwrap();
        let out = e
            .answer(&s.session_id, "lithium grease to the elbow joint", &AnswerOptions::default())
            .unwrap();
        assert!(!out.refused);
        assert_eq!(out.tools_used, vec![r.tool_id.clone()]);
        let cited = &out.turn.citations[0];
        assert_eq!(cited.doc_id, r.doc_id);
        let chunk = e.document(&r.doc_id).unwrap().chunk(&cited.chunk_id).unwrap().clone();
        assert!(chunk.text.contains("lithium grease"));
        assert_eq!(e.get_session(&s.session_id).unwrap().turns.len(), 2);
    }

    #[test]
    fn unmatched_question_is_refused_without_citations() {
        let (e, _) = with_manual(lexical(), EngineParts::default());
        let s = e.create_session(None).unwrap();
        let out = e
            .answer(&s.session_id, "quarterly revenue of the cafeteria", &AnswerOptions::default())
            .unwrap();
        assert!(out.refused);
        assert!(out.turn.citations.is_empty());
        assert_eq!(out.turn.text, DEFAULT_REFUSAL);
    }

    #[test]
    fn turns_grow_by_two_and_errors_leave_no_trace() {
        let llm: Arc<dyn LlmProvider> = Arc::new(UnavailableLlm);
        let (e, _) = with_manual(lexical(), EngineParts { llm: Some(llm), embedder: None });
        let s = e.create_session(Some("terse")).unwrap();
        let err = e.answer(&s.session_id, "torque settings flange", &AnswerOptions::default()).unwrap_err();
        assert!(err.is_provider_unavailable());
        assert!(e.get_session(&s.session_id).unwrap().turns.is_empty());
        assert!(matches!(e.answer(&s.session_id, "  ", &AnswerOptions::default()), Err(EngineError::EmptyQuery)));
        assert!(e.answer("nope", "torque", &AnswerOptions::default()).unwrap_err().is_unknown_session());

        let (e, _) = with_manual(lexical(), EngineParts::default());
        let s = e.create_session(None).unwrap();
        for n in 1..=3 {
            e.answer(&s.session_id, "torque settings flange", &AnswerOptions::default()).unwrap();
            assert_eq!(e.get_session(&s.session_id).unwrap().turns.len(), 2 * n);
        }
    }

    #[test]
    fn history_and_system_prompt_reach_the_model() {
        let seen = Arc::new(Mutex::new(Vec::<String>::new()));
        let log = seen.clone();
        let llm: Arc<dyn LlmProvider> = Arc::new(ScriptedLlm::new(move |p| {
            log.lock().push(p.to_string());
            Ok("ok".into())
        }));
        let (e, _) = with_manual(lexical(), EngineParts { llm: Some(llm), embedder: None });
        let s = e.create_session(Some("Speak like a pilot.")).unwrap();
        e.answer(&s.session_id, "torque flange bolts", &AnswerOptions::default()).unwrap();
        e.answer(&s.session_id, "lubrication grease interval", &AnswerOptions::default()).unwrap();
        let prompts = seen.lock();
        assert!(prompts[1].starts_with("Speak like a pilot."));
        assert!(prompts[1].contains("User: torque flange bolts"));
        assert!(prompts[1].contains("Assistant: ok"));
    }

    #[test]
    fn reingest_replaces_chunks() {
        let (e, r) = with_manual(lexical(), EngineParts::default());
        let before = e.index_count();
        let r2 = e
            .ingest(
                b"# Robot Arm Service Manual\n\nOnly one paragraph now.",
                SourceFormat::Markdown,
                &DocumentMeta::titled("Robot Arm Service Manual").with_version("2"),
                &IngestOptions::default(),
            )
            .unwrap();
        assert_eq!(r.doc_id, r2.doc_id);
        assert!(r2.replaced);
        assert_eq!(e.index_count(), r2.chunk_count);
        assert!(before > e.index_count());
        assert_eq!(e.tools().len(), 1);
        assert_eq!(e.tools()[0].version, "2");
        assert_eq!(e.remove_document(&r.doc_id).unwrap(), r2.chunk_count);
        assert!(e.tools().is_empty());
    }

    #[test]
    fn degraded_agent_is_reported_and_answer_continues() {
        let state = Arc::new(MockAgentState::new());
        state.insert_json(
            AgentKind::Pdm,
            "arm7",
            &serde_json::json!({"asset_id": "arm7", "health_score": 0.42, "predicted_failure_mode": "bearing wear"}),
        );
        let server = BackgroundServer::local(mock_router(state.clone())).unwrap();
        let mut cfg = lexical();
        cfg.agents = AgentKind::ALL
            .iter()
            .map(|&a| AgentEndpointConfig::new(a, server.url()).with_timeout_ms(500))
            .collect();
        let prompts = Arc::new(Mutex::new(String::new()));
        let log = prompts.clone();
        let llm: Arc<dyn LlmProvider> = Arc::new(ScriptedLlm::new(move |p| {
            *log.lock() = p.to_string();
            Ok("Health is 0.42.".into())
        }));
        let (e, _) = with_manual(cfg, EngineParts { llm: Some(llm), embedder: None });
        let s = e.create_session(None).unwrap();

        let out = e
            .answer(&s.session_id, "predicted failure and sensor readings for id:arm7", &AnswerOptions::default())
            .unwrap();
        assert_eq!(out.agents_used, vec![AgentKind::Pdm]);
        assert_eq!(out.agent_failures.len(), 1);
        assert_eq!(out.agent_failures[0].0, AgentKind::Iot);
        assert!(out.turn.tool_trace.contains(&"pdm".to_string()));
        assert!(!out.refused);
        assert!(prompts.lock().contains("health score 0.42"));
        assert!(prompts.lock().contains("agent iot unavailable"));

        state.set_fault(AgentKind::Pdm, Some(Fault::Down));
        let out = e
            .answer(&s.session_id, "predicted failure for id:arm7", &AnswerOptions::default())
            .unwrap();
        assert!(out.agents_used.is_empty());
        assert_eq!(out.agent_failures[0].0, AgentKind::Pdm);
    }

    #[test]
    fn state_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EngineConfig {
            data_dir: Some(dir.path().to_path_buf()),
            ..lexical()
        };
        let (e, r) = with_manual(cfg.clone(), EngineParts::default());
        let s = e.create_session(None).unwrap();
        e.answer(&s.session_id, "torque flange bolts", &AnswerOptions::default()).unwrap();
        let count = e.index_count();
        drop(e);

        let e = Engine::open(cfg.clone()).unwrap();
        assert_eq!(e.index_count(), count);
        assert_eq!(e.tools().len(), 1);
        assert_eq!(e.get_session(&s.session_id).unwrap().turns.len(), 2);
        assert!(e.document(&r.doc_id).is_some());
        drop(e);

        // a lost snapshot is rebuilt from the stored documents
        fs::remove_file(dir.path().join("index.fridx")).unwrap();
        let e = Engine::open(cfg).unwrap();
        assert_eq!(e.index_count(), count);
    }

    #[test]
    fn config_validation() {
        let mut c = EngineConfig::default();
        c.index.dim = 8;
        assert!(matches!(c.validate(), Err(EngineError::Config(_))));
        let c = EngineConfig { k: 0, ..EngineConfig::default() };
        assert!(c.validate().is_err());
        let c: EngineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, EngineConfig::default());
    }

    #[test]
    fn auto_metadata_names_sections() {
        let doc = parse_document(MANUAL.as_bytes(), SourceFormat::Markdown, &DocumentMeta::titled("M")).unwrap();
        let chunks = chunk_document(&doc, &ChunkerConfig::default()).unwrap();
        let s = auto_summary(&doc, &chunks);
        assert!(s.contains("Torque settings") && s.contains("Lubrication"), "{s}");
        let k = auto_keywords(&doc, &chunks);
        assert!(k.contains(&"torque".to_string()) && k.contains(&"grease".to_string()));
    }
}
