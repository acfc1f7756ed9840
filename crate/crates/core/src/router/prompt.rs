//! Answer prompt templates with `{system}`, `{history}`, `{context}`,
//! `{agents}` and `{query}` placeholders.

use std::fmt::Write as _;

use super::session::Turn;
use super::RouterError;
use crate::llm::{CONTEXT_CLOSE, CONTEXT_OPEN, QUESTION_CLOSE, QUESTION_OPEN};

pub const PLACEHOLDERS: [&str; 5] = ["system", "history", "context", "agents", "query"];

pub const DEFAULT_TEMPLATE: &str = "\
{system}

Conversation so far:
{history}

Document excerpts. Each starts with its [doc_id:chunk_id] tag; cite every excerpt you use with that tag:
{context}

Auxiliary agent data:
{agents}

Answer the question below using only the excerpts and agent data above.
{query}
";

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are an assistant for industrial technicians. \
Answer from the supplied documentation, give actionable steps, and cite sources.";

/// One retrieved excerpt as placed in the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextExcerpt {
    pub doc_id: String,
    pub chunk_id: String,
    pub title: String,
    pub heading_path: Vec<String>,
    pub text: String,
    pub score: f64,
}

impl ContextExcerpt {
    pub fn tag(&self) -> String {
        format!("[{}:{}]", self.doc_id, self.chunk_id)
    }
}

/// A note about one agent: its summary, or why it is missing.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentNote {
    Data(String),
    Unavailable { agent: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

enum Piece<'a> {
    Lit(&'a str),
    Slot(&'static str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    'outer: while let Some(open) = rest.find('{') {
        for name in PLACEHOLDERS {
            let tail = &rest[open + 1..];
            if tail.starts_with(name) && tail[name.len()..].starts_with('}') {
                out.push(Piece::Lit(&rest[..open]));
                out.push(Piece::Slot(name));
                rest = &tail[name.len() + 1..];
                continue 'outer;
            }
        }
        out.push(Piece::Lit(&rest[..=open]));
        rest = &rest[open + 1..];
    }
    out.push(Piece::Lit(rest));
    out
}

impl PromptTemplate {
    /// `{context}` and `{query}` are required; other braces pass through.
    pub fn parse(text: &str) -> Result<Self, RouterError> {
        let slots: Vec<&str> = pieces(text)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s),
                Piece::Lit(_) => None,
            })
            .collect();
        for required in ["context", "query"] {
            if !slots.contains(&required) {
                return Err(RouterError::Template(format!("missing {{{required}}} placeholder")));
            }
        }
        Ok(PromptTemplate { text: text.to_string() })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RouterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RouterError::Template(format!("{}: {e}", path.display())))?;
        PromptTemplate::parse(&text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Single pass: placeholder-like text inside substituted values is left
    /// alone.
    pub fn render(
        &self,
        system: &str,
        history: &[Turn],
        context: &[ContextExcerpt],
        agents: &[AgentNote],
        query: &str,
    ) -> String {
        let mut out = String::with_capacity(self.text.len() + 1024);
        for p in pieces(&self.text) {
            match p {
                Piece::Lit(s) => out.push_str(s),
                Piece::Slot("system") => out.push_str(system),
                Piece::Slot("history") => out.push_str(&render_history(history)),
                Piece::Slot("context") => out.push_str(&render_context(context)),
                Piece::Slot("agents") => out.push_str(&render_agents(agents)),
                Piece::Slot(_) => {
                    let _ = write!(out, "{QUESTION_OPEN}\n{}\n{QUESTION_CLOSE}", query.trim());
                }
            }
        }
        out
    }
}

fn render_history(turns: &[Turn]) -> String {
    if turns.is_empty() {
        return "(none)".into();
    }
    turns
        .iter()
        .map(|t| format!("{}: {}", t.role.label(), t.text.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_context(excerpts: &[ContextExcerpt]) -> String {
    let mut s = String::from(CONTEXT_OPEN);
    s.push('\n');
    if excerpts.is_empty() {
        s.push_str("(no excerpts)\n");
    }
    for e in excerpts {
        let mut source = e.title.clone();
        for h in &e.heading_path {
            let _ = write!(source, " > {h}");
        }
        let _ = write!(s, "{} ({source})\n{}\n\n", e.tag(), e.text.trim_end());
    }
    s.push_str(CONTEXT_CLOSE);
    s
}

fn render_agents(notes: &[AgentNote]) -> String {
    if notes.is_empty() {
        return "(none)".into();
    }
    notes
        .iter()
        .map(|n| match n {
            AgentNote::Data(text) => text.clone(),
            AgentNote::Unavailable { agent, reason } => format!("agent {agent} unavailable ({reason})"),
        })
        .collect::<Vec<_>>()
        .join("\n")
}
