use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::RouterError;
use crate::index::VectorIndex;
use crate::ingest::{DocId, Document};
use crate::text::{content_terms, truncate_chars};

pub const MAX_SUMMARY_CHARS: usize = 1000;

/// A per-document retrieval tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub tool_id: String,
    pub doc_id: DocId,
    pub title: String,
    pub version: String,
    pub summary: String,
    pub keywords: Vec<String>,
    pub created_at: DateTime<Utc>,
}

impl ToolSpec {
    pub fn id_for(doc_id: &DocId) -> String {
        format!("tool-{doc_id}")
    }

    /// Terms a query can match: title, keywords and summary.
    pub fn terms(&self) -> BTreeSet<String> {
        let mut t = content_terms(&self.title);
        for k in &self.keywords {
            t.extend(content_terms(k));
        }
        t.extend(content_terms(&self.summary));
        t
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        ToolRegistry::default()
    }

    /// Register (or supersede) the tool for `doc`, which must already be in
    /// `index`.
    pub fn register(
        &mut self,
        doc: &Document,
        summary: &str,
        keywords: &[String],
        index: &dyn VectorIndex,
    ) -> Result<ToolSpec, RouterError> {
        if !index.contains_document(&doc.doc_id)? {
            return Err(RouterError::UnknownDocument(doc.doc_id.to_string()));
        }
        let summary = truncate_chars(summary.trim(), MAX_SUMMARY_CHARS);
        if summary.is_empty() {
            return Err(RouterError::EmptySummary);
        }
        let mut seen = BTreeSet::new();
        let keywords = keywords
            .iter()
            .map(|k| k.trim().to_lowercase())
            .filter(|k| !k.is_empty() && seen.insert(k.clone()))
            .collect();
        let spec = ToolSpec {
            tool_id: ToolSpec::id_for(&doc.doc_id),
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            version: doc.version.clone(),
            summary,
            keywords,
            created_at: Utc::now(),
        };
        self.tools.insert(spec.tool_id.clone(), spec.clone());
        Ok(spec)
    }

    /// Insert a spec as-is (used when reloading persisted state).
    pub fn restore(&mut self, spec: ToolSpec) {
        self.tools.insert(spec.tool_id.clone(), spec);
    }

    pub fn remove_document(&mut self, doc_id: &DocId) -> Option<ToolSpec> {
        self.tools.remove(&ToolSpec::id_for(doc_id))
    }

    pub fn get(&self, tool_id: &str) -> Option<&ToolSpec> {
        self.tools.get(tool_id)
    }

    pub fn for_document(&self, doc_id: &DocId) -> Option<&ToolSpec> {
        self.get(&ToolSpec::id_for(doc_id))
    }

    /// Look a tool up by id, or by exact case-insensitive title.
    pub fn resolve(&self, name: &str) -> Option<&ToolSpec> {
        let name = name.trim();
        self.tools.get(name).or_else(|| {
            self.tools
                .values()
                .find(|t| t.title.eq_ignore_ascii_case(name) || t.doc_id.as_str() == name)
        })
    }

    /// All tools in tool_id order.
    pub fn list(&self) -> Vec<&ToolSpec> {
        self.tools.values().collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}
