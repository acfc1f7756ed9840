//! Retrieval evaluation: claim recall, context precision, hallucination and
//! faithfulness, and a benchmark runner that sweeps one configuration axis.

mod bench;
mod claims;
mod metrics;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;

pub use bench::{
    corpus_hash, default_variants, run_bench, BenchReport, BenchRow, BenchSpec, CorpusEntry, FixedConfig, Generator, Provenance, RowStatus, SweepAxis, Variant,
    VariantSetting, COLUMNS, COMPOSITE_FORMULA, CONVENTIONS, RANK_TIES,
};
pub use claims::{
    contains_claim, normalize, raw_token_count, split_sentences, Claim, ClaimOracle, ClaimOrigin, LlmOracle,
    RuleOracle, MIN_CLAIM_TOKENS,
};
pub use metrics::{round2, score, EvalScores, ItemScore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth yields no claims for query '{0}'")]
    EmptyGroundTruth(String),
    #[error("claim oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("invalid QA set: {0}")]
    InvalidQa(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("generator failed: {0}")]
    Generator(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub query: String,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_doc_id: Option<String>,
}

impl QaItem {
    pub fn new(query: impl Into<String>, ground_truth: impl Into<String>) -> Self {
        QaItem {
            query: query.into(),
            ground_truth: ground_truth.into(),
            source_doc_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.query.trim().is_empty() || self.ground_truth.trim().is_empty() {
            return Err(EvalError::InvalidQa(format!(
                "query and ground_truth must be non-empty (query '{}')",
                self.query
            )));
        }
        Ok(())
    }
}

/// A JSON list of `{query, ground_truth, source_doc_id?}`.
pub fn load_qa(path: &Path) -> Result<Vec<QaItem>, EvalError> {
    let raw = std::fs::read(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let items: Vec<QaItem> =
        serde_json::from_slice(&raw).map_err(|e| EvalError::InvalidQa(format!("{}: {e}", path.display())))?;
    for q in &items {
        q.validate()?;
    }
    Ok(items)
}
