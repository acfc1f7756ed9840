//! Query routing: the tool registry, lexical and model-driven routing,
//! answer prompts, citation extraction and sessions.

mod prompt;
mod registry;
mod routing;
mod session;

use std::collections::HashSet;

use thiserror::Error;

use crate::index::IndexError;
use crate::ingest::DocId;
use crate::llm::TAG_RE;

pub use prompt::{AgentNote, ContextExcerpt, PromptTemplate, DEFAULT_SYSTEM_PROMPT, DEFAULT_TEMPLATE, PLACEHOLDERS};
pub use registry::{ToolRegistry, ToolSpec, MAX_SUMMARY_CHARS};
pub use routing::{
    detect_agents, route_lexical, route_llm, routing_prompt, RoutingDecision, RoutingPolicy, MAX_TOOLS,
    MIN_TOOL_SCORE,
};
pub use session::{Citation, Role, Session, SessionHandle, SessionSlot, SessionStore, Turn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouterError {
    #[error("document {0} is not in the index")]
    UnknownDocument(String),
    #[error("tool summary must not be empty")]
    EmptySummary,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("llm provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("session storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// `[doc_id:chunk_id]` tags in `answer` that name a supplied excerpt, in
/// order of first appearance.
pub fn extract_citations(answer: &str, context: &[ContextExcerpt]) -> Vec<Citation> {
    let supplied: HashSet<(&str, &str)> = context
        .iter()
        .map(|e| (e.doc_id.as_str(), e.chunk_id.as_str()))
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in TAG_RE.captures_iter(answer) {
        let (d, k) = (c.get(1).unwrap().as_str(), c.get(2).unwrap().as_str());
        if supplied.contains(&(d, k)) && seen.insert((d, k)) {
            out.push(Citation {
                doc_id: DocId(d.to_string()),
                chunk_id: k.to_string(),
            });
        }
    }
    out
}
