use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::claims::ClaimOracle;
use super::metrics::{round2, score, EvalScores, ItemScore};
use super::{EvalError, QaItem};
use crate::chunker::ChunkerConfig;
use crate::embed::EmbeddingProviderSpec;
use crate::engine::{Engine, EngineConfig, IngestOptions};
use crate::index::IndexBackendSpec;
use crate::ingest::{DocId, Document};
use crate::llm::LlmProvider;
use crate::router::{ContextExcerpt, PromptTemplate, DEFAULT_SYSTEM_PROMPT};

pub const COLUMNS: [&str; 5] = ["CR", "CP", "Hallu.", "Faith.", "Rank"];

pub const COMPOSITE_FORMULA: &str = "(cr + cp + (100 - hallu) + faith) / 4";

pub const RANK_TIES: &str = "composite descending (2 dp), then lower hallu, then label ascending";

/// Scoring conventions recorded in every report.
pub const CONVENTIONS: [&str; 4] = [
    "no response claims: faith = 0, hallu = 0, self_knowledge = 100 (flagged empty response)",
    "no retrieved chunks: cp = 0",
    "cp is chunk-level: a chunk counts when it alone entails some ground-truth claim",
    "scores are means over QA items, percentages to 2 dp",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Chunking,
    Embedding,
    VectorStore,
}

impl SweepAxis {
    /// First column header.
    pub fn header(self) -> &'static str {
        match self {
            SweepAxis::Chunking => "Chunking",
            SweepAxis::Embedding => "Embedding",
            SweepAxis::VectorStore => "Vector DB",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Chunking => "chunking",
            SweepAxis::Embedding => "embedding",
            SweepAxis::VectorStore => "vector_store",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chunking" => Ok(SweepAxis::Chunking),
            "embedding" => Ok(SweepAxis::Embedding),
            "vector_store" | "vector-store" | "vectordb" => Ok(SweepAxis::VectorStore),
            o => Err(format!("unknown sweep axis '{o}' (chunking, embedding, vector_store)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSetting {
    Chunking(ChunkerConfig),
    Embedding(EmbeddingProviderSpec),
    VectorStore(IndexBackendSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub setting: VariantSetting,
}

impl Variant {
    pub fn chunking(cfg: ChunkerConfig) -> Self {
        Variant {
            label: cfg.label(),
            setting: VariantSetting::Chunking(cfg),
        }
    }

    pub fn embedding(spec: EmbeddingProviderSpec) -> Self {
        Variant {
            label: spec.provider_id.clone(),
            setting: VariantSetting::Embedding(spec),
        }
    }

    pub fn vector_store(spec: IndexBackendSpec) -> Self {
        Variant {
            label: spec.label(),
            setting: VariantSetting::VectorStore(spec),
        }
    }

    pub fn axis(&self) -> SweepAxis {
        match self.setting {
            VariantSetting::Chunking(_) => SweepAxis::Chunking,
            VariantSetting::Embedding(_) => SweepAxis::Embedding,
            VariantSetting::VectorStore(_) => SweepAxis::VectorStore,
        }
    }

    /// `semantic`, `semantic-N`, `fixed-N` or `fixed-N/O` (overlap O).
    pub fn parse_chunking(s: &str, default_max: usize) -> Result<Self, EvalError> {
        let bad = || EvalError::InvalidSweep(format!("bad chunking variant '{s}'"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let cfg = match s.split_once('-') {
            None if s == "semantic" => ChunkerConfig::semantic(default_max),
            Some(("semantic", n)) => ChunkerConfig::semantic(num(n)?),
            Some(("fixed", rest)) => {
                let (n, o) = rest.split_once('/').unwrap_or((rest, "0"));
                ChunkerConfig {
                    overlap_chars: num(o)?,
                    ..ChunkerConfig::fixed(num(n)?)
                }
            }
            _ => return Err(bad()),
        };
        cfg.validate().map_err(|e| EvalError::InvalidSweep(e.to_string()))?;
        Ok(Variant::chunking(cfg))
    }

    /// `exact`, `hnsw`, `hnsw-M-EF` or `remote=<url>`.
    pub fn parse_vector_store(s: &str, dim: usize) -> Result<Self, EvalError> {
        let bad = || EvalError::InvalidSweep(format!("bad vector store variant '{s}'"));
        let spec = if s == "exact" {
            IndexBackendSpec::exact(dim)
        } else if s == "hnsw" {
            IndexBackendSpec::hnsw(dim)
        } else if let Some(url) = s.strip_prefix("remote=") {
            IndexBackendSpec::remote(dim, url)
        } else if let Some(rest) = s.strip_prefix("hnsw-") {
            let (m, ef) = rest.split_once('-').ok_or_else(bad)?;
            let mut spec = IndexBackendSpec::hnsw(dim);
            spec.hnsw.m = m.parse().map_err(|_| bad())?;
            spec.hnsw.ef_search = ef.parse().map_err(|_| bad())?;
            spec
        } else {
            return Err(bad());
        };
        Ok(Variant::vector_store(spec))
    }

    /// `provider_id` or `provider_id@dim`; endpoint and credentials come
    /// from `base`.
    pub fn parse_embedding(s: &str, base: &EmbeddingProviderSpec) -> Result<Self, EvalError> {
        let bad = || EvalError::InvalidSweep(format!("bad embedding variant '{s}'"));
        let (id, dim) = match s.rsplit_once('@') {
            Some((id, d)) => (id, d.parse::<usize>().map_err(|_| bad())?),
            None => (s, base.dim),
        };
        if id.is_empty() {
            return Err(bad());
        }
        let spec = EmbeddingProviderSpec {
            provider_id: id.to_string(),
            dim,
            ..base.clone()
        };
        spec.validate().map_err(|e| EvalError::InvalidSweep(e.to_string()))?;
        let mut v = Variant::embedding(spec);
        if s.contains('@') {
            v.label = s.to_string();
        }
        Ok(v)
    }

    pub fn parse(axis: SweepAxis, s: &str, base: &EngineConfig) -> Result<Self, EvalError> {
        match axis {
            SweepAxis::Chunking => Variant::parse_chunking(s, base.chunker.max_chars),
            SweepAxis::Embedding => Variant::parse_embedding(s, &base.embedding),
            SweepAxis::VectorStore => Variant::parse_vector_store(s, base.embedding.dim),
        }
    }
}

/// Variants swept when none are configured.
pub fn default_variants(axis: SweepAxis) -> &'static [&'static str] {
    match axis {
        SweepAxis::Chunking => &["semantic", "fixed-1024", "fixed-2028"],
        SweepAxis::Embedding => &["test:hash-ngram@128", "test:hash-ngram@256", "test:hash-ngram@512"],
        SweepAxis::VectorStore => &["exact", "hnsw"],
    }
}

/// What to sweep and the configuration held fixed.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub axis: SweepAxis,
    pub variants: Vec<Variant>,
    pub base: EngineConfig,
}

impl BenchSpec {
    fn engine_config(&self, v: &Variant) -> EngineConfig {
        let mut cfg = self.base.clone();
        cfg.data_dir = None;
        cfg.prompt_template = None;
        match &v.setting {
            VariantSetting::Chunking(c) => cfg.chunker = c.clone(),
            VariantSetting::Embedding(e) => {
                cfg.embedding = e.clone();
                cfg.index.dim = e.dim;
            }
            VariantSetting::VectorStore(i) => {
                cfg.index = i.clone();
                cfg.index.dim = cfg.embedding.dim;
            }
        }
        cfg
    }
}

/// Produces the response to score from the retrieved excerpts.
#[derive(Clone)]
pub enum Generator {
    /// The retrieved chunk texts, concatenated.
    Extractive,
    Llm(Arc<dyn LlmProvider>),
}

impl Generator {
    pub fn id(&self) -> String {
        match self {
            Generator::Extractive => "extractive".into(),
            Generator::Llm(l) => format!("llm:{}", l.id()),
        }
    }

    pub fn generate(&self, query: &str, excerpts: &[ContextExcerpt]) -> Result<String, EvalError> {
        match self {
            Generator::Extractive => Ok(excerpts.iter().map(|e| e.text.trim()).collect::<Vec<_>>().join("\n\n")),
            Generator::Llm(llm) => {
                let prompt = PromptTemplate::default().render(DEFAULT_SYSTEM_PROMPT, &[], excerpts, &[], query);
                llm.complete(&prompt, 0.0).map_err(|e| EvalError::Generator(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub status: RowStatus,
    pub rank: Option<usize>,
    pub scores: Option<EvalScores>,
    pub composite: Option<f64>,
    pub items: usize,
    pub empty_responses: usize,
    pub chunks_indexed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub setting: VariantSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedConfig {
    pub chunker: ChunkerConfig,
    pub embedding: EmbeddingProviderSpec,
    pub index: IndexBackendSpec,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub doc_id: String,
    pub title: String,
    pub version: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub axis: SweepAxis,
    pub fixed: FixedConfig,
    pub corpus_hash: String,
    pub corpus: Vec<CorpusEntry>,
    pub qa_hash: String,
    pub qa_items: usize,
    pub oracle: String,
    pub generator: String,
    pub composite: String,
    pub rank_ties: String,
    pub conventions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub columns: Vec<String>,
    /// Ranked rows first, failed variants after them.
    pub rows: Vec<BenchRow>,
    pub provenance: Provenance,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over documents in doc_id order: id, title, version and body.
pub fn corpus_hash(corpus: &[Document]) -> String {
    let mut docs: Vec<&Document> = corpus.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut h = Sha256::new();
    for d in docs {
        for part in [d.doc_id.as_str(), &d.title, &d.version, &d.body] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
    }
    hex::encode(h.finalize())
}

struct VariantResult {
    scores: EvalScores,
    items: usize,
    empty: usize,
    chunks: usize,
}

fn run_variant(
    corpus: &[Document],
    qa: &[QaItem],
    cfg: EngineConfig,
    generator: &Generator,
    oracle: &dyn ClaimOracle,
) -> Result<VariantResult, EvalError> {
    let k = cfg.k;
    let engine = Engine::open(cfg)?;
    for d in corpus {
        engine.ingest_document(d.clone(), &IngestOptions::default())?;
    }
    let chunks = engine.index_count();

    let eval_one = |q: &QaItem| -> Result<ItemScore, EvalError> {
        let doc = q.source_doc_id.as_deref().map(|d| DocId(d.to_string()));
        let excerpts = engine.search(&q.query, k, doc.as_ref())?;
        let response = generator.generate(&q.query, &excerpts)?;
        let texts: Vec<&str> = excerpts.iter().map(|e| e.text.as_str()).collect();
        score(q, &texts, &response, oracle)
    };

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(qa.len()).max(1);
    let per = qa.len().div_ceil(workers);
    let results: Vec<Result<ItemScore, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = qa
            .chunks(per)
            .map(|part| s.spawn(move || part.iter().map(eval_one).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    });
    let items: Vec<ItemScore> = results.into_iter().collect::<Result<_, _>>()?;
    let all: Vec<EvalScores> = items.iter().map(|i| i.scores).collect();
    Ok(VariantResult {
        scores: EvalScores::mean(&all),
        items: items.len(),
        empty: items.iter().filter(|i| i.empty_response).count(),
        chunks,
    })
}

/// Re-ingest the corpus per variant, retrieve, generate and score every QA
/// item, then rank the variants. Failed variants are reported, not dropped.
pub fn run_bench(
    corpus: &[Document],
    qa: &[QaItem],
    spec: &BenchSpec,
    generator: &Generator,
    oracle: &dyn ClaimOracle,
) -> Result<BenchReport, EvalError> {
    if spec.variants.is_empty() {
        return Err(EvalError::InvalidSweep("no variants".into()));
    }
    if qa.is_empty() {
        return Err(EvalError::InvalidQa("no QA items".into()));
    }
    for q in qa {
        q.validate()?;
    }
    for v in &spec.variants {
        if v.axis() != spec.axis {
            return Err(EvalError::InvalidSweep(format!(
                "variant '{}' is a {} setting in a {} sweep",
                v.label,
                v.axis().as_str(),
                spec.axis.as_str()
            )));
        }
    }
    let mut labels: Vec<&str> = spec.variants.iter().map(|v| v.label.as_str()).collect();
    labels.sort();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(EvalError::InvalidSweep("duplicate variant labels".into()));
    }

    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for v in &spec.variants {
        tracing::info!(variant = %v.label, "bench variant");
        match run_variant(corpus, qa, spec.engine_config(v), generator, oracle) {
            Ok(r) => {
                let scores = r.scores.rounded();
                ok.push(BenchRow {
                    label: v.label.clone(),
                    status: RowStatus::Ok,
                    rank: None,
                    scores: Some(scores),
                    composite: Some(round2(r.scores.composite())),
                    items: r.items,
                    empty_responses: r.empty,
                    chunks_indexed: r.chunks,
                    error: None,
                    setting: v.setting.clone(),
                })
            }
            Err(e) => failed.push(BenchRow {
                label: v.label.clone(),
                status: RowStatus::Failed,
                rank: None,
                scores: None,
                composite: None,
                items: 0,
                empty_responses: 0,
                chunks_indexed: 0,
                error: Some(e.to_string()),
                setting: v.setting.clone(),
            }),
        }
    }

    ok.sort_by(|a, b| {
        let (ca, cb) = (a.composite.unwrap_or(0.0), b.composite.unwrap_or(0.0));
        let (ha, hb) = (a.scores.map_or(0.0, |s| s.hallu), b.scores.map_or(0.0, |s| s.hallu));
        cb.total_cmp(&ca).then(ha.total_cmp(&hb)).then_with(|| a.label.cmp(&b.label))
    });
    for (i, row) in ok.iter_mut().enumerate() {
        row.rank = Some(i + 1);
    }
    ok.extend(failed);

    let qa_json = serde_json::to_vec(qa).map_err(|e| EvalError::Io(e.to_string()))?;
    let mut entries: Vec<CorpusEntry> = corpus
        .iter()
        .map(|d| CorpusEntry {
            doc_id: d.doc_id.to_string(),
            title: d.title.clone(),
            version: d.version.clone(),
            sha256: sha_hex(d.body.as_bytes()),
        })
        .collect();
    entries.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    Ok(BenchReport {
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows: ok,
        provenance: Provenance {
            tool: format!("indurag {}", env!("CARGO_PKG_VERSION")),
            axis: spec.axis,
            fixed: FixedConfig {
                chunker: spec.base.chunker.clone(),
                embedding: spec.base.embedding.clone(),
                index: spec.base.index.clone(),
                k: spec.base.k,
            },
            corpus_hash: corpus_hash(corpus),
            corpus: entries,
            qa_hash: sha_hex(&qa_json),
            qa_items: qa.len(),
            oracle: oracle.id(),
            generator: generator.id(),
            composite: COMPOSITE_FORMULA.into(),
            rank_ties: RANK_TIES.into(),
            conventions: CONVENTIONS.iter().map(|c| c.to_string()).collect(),
        },
    })
}

impl BenchReport {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Failed)
    }

    pub fn row(&self, label: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Pretty JSON with a trailing newline. Byte-stable for equal inputs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned markdown table; the best value per column is bold.
    pub fn to_markdown(&self) -> String {
        let ok: Vec<&BenchRow> = self.rows.iter().filter(|r| r.scores.is_some()).collect();
        let best = |f: fn(&EvalScores) -> f64, lower: bool| -> Option<f64> {
            let vals = ok.iter().filter_map(|r| r.scores.as_ref().map(f));
            if lower {
                vals.reduce(f64::min)
            } else {
                vals.reduce(f64::max)
            }
        };
        let picks: [(fn(&EvalScores) -> f64, bool); 4] =
            [(|s| s.cr, false), (|s| s.cp, false), (|s| s.hallu, true), (|s| s.faith, false)];
        let bests: Vec<Option<f64>> = picks.iter().map(|(f, l)| best(*f, *l)).collect();

        let mut table: Vec<Vec<String>> = vec![std::iter::once(self.provenance.axis.header().to_string())
            .chain(COLUMNS.iter().map(|c| c.to_string()))
            .collect()];
        for r in &self.rows {
            let mut cells = vec![r.label.clone()];
            match &r.scores {
                Some(s) => {
                    for (i, (f, _)) in picks.iter().enumerate() {
                        let v = f(s);
                        let text = format!("{v:.2}");
                        cells.push(if ok.len() > 1 && bests[i] == Some(v) {
                            format!("**{text}**")
                        } else {
                            text
                        });
                    }
                    cells.push(r.rank.map_or("-".into(), |n| n.to_string()));
                }
                None => {
                    cells.extend(std::iter::repeat_n("failed".to_string(), 4));
                    cells.push("-".into());
                }
            }
            table.push(cells);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let line = |row: &[String]| -> String {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            format!("| {} |", cells.join(" | "))
        };
        let mut out = line(&table[0]);
        out.push('\n');
        let seps: Vec<String> = widths
            .iter()
            .enumerate()
            .map(|(i, w)| {
                if i == 0 {
                    format!(":{}", "-".repeat(w + 1))
                } else {
                    format!("{}:", "-".repeat(w + 1))
                }
            })
            .collect();
        let _ = writeln!(out, "|{}|", seps.join("|"));
        for row in &table[1..] {
            out.push_str(&line(row));
            out.push('\n');
        }
        if ok.len() > 1 {
            out.push_str("\nBold values indicate the best performance.\n");
        }
        for r in self.rows.iter().filter(|r| r.status == RowStatus::Failed) {
            let _ = writeln!(out, "\n{} failed: {}", r.label, r.error.as_deref().unwrap_or("unknown error"));
        }
        out
    }
}
