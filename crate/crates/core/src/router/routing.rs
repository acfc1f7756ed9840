use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::registry::ToolRegistry;
use super::session::Turn;
use super::RouterError;
use crate::agents::AgentKind;
use crate::llm::{LlmError, LlmProvider};
use crate::text::{content_terms, terms};

pub const MIN_TOOL_SCORE: f64 = 0.2;
pub const MAX_TOOLS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingPolicy {
    #[default]
    Llm,
    Lexical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub selected_tools: Vec<String>,
    pub selected_agents: Vec<AgentKind>,
    pub rationale: String,
    pub policy: RoutingPolicy,
}

impl RoutingDecision {
    pub fn is_empty(&self) -> bool {
        self.selected_tools.is_empty() && self.selected_agents.is_empty()
    }
}

const IOT_TERMS: &[&str] = &["sensor", "reading", "telemetry", "temperature", "pressure"];
const PDM_TERMS: &[&str] = &["maintenance", "failure", "remaining"];
const XAI_TERMS: &[&str] = &["why", "explanation"];

/// Token match with a trailing plural `s` tolerated.
fn token_is(token: &str, word: &str) -> bool {
    token == word || token.strip_suffix('s') == Some(word)
}

fn matched<'a>(tokens: &'a [String], words: &[&str]) -> Vec<&'a str> {
    tokens
        .iter()
        .filter(|t| words.iter().any(|w| token_is(t, w)))
        .map(String::as_str)
        .collect()
}

/// Intent patterns over the raw (stopword-inclusive) query tokens, with the
/// matched terms per agent.
pub fn detect_agents(query: &str) -> Vec<(AgentKind, Vec<String>)> {
    let tokens = terms(query);
    let predict: Vec<&str> = tokens
        .iter()
        .filter(|t| t.starts_with("predict"))
        .map(String::as_str)
        .collect();
    let model: Vec<&str> = tokens
        .iter()
        .filter(|t| token_is(t, "model"))
        .map(String::as_str)
        .collect();

    let mut out = Vec::new();

    let mut pdm = predict.clone();
    pdm.extend(matched(&tokens, PDM_TERMS));
    if !pdm.is_empty() {
        out.push((AgentKind::Pdm, pdm));
    }

    let mut xai = matched(&tokens, XAI_TERMS);
    xai.extend(tokens.iter().filter(|t| t.starts_with("explain") && *t != "explanation").map(String::as_str));
    if !xai.is_empty() && !(predict.is_empty() && model.is_empty()) {
        xai.extend(predict.iter().chain(&model));
        out.push((AgentKind::Xai, xai));
    }

    let iot = matched(&tokens, IOT_TERMS);
    if !iot.is_empty() {
        out.push((AgentKind::Iot, iot));
    }

    out.into_iter()
        .map(|(k, mut v)| {
            let mut seen = BTreeSet::new();
            v.retain(|t| seen.insert(*t));
            (k, v.into_iter().map(str::to_string).collect())
        })
        .collect()
}

/// Deterministic routing by term overlap with each tool's metadata.
pub fn route_lexical(query: &str, registry: &ToolRegistry) -> RoutingDecision {
    let q = content_terms(query);
    let mut scored: Vec<(usize, &str, Vec<String>)> = Vec::new();
    if !q.is_empty() {
        for tool in registry.list() {
            let hit: Vec<String> = tool.terms().intersection(&q).cloned().collect();
            // |hit| / |q| >= 0.2, in integers
            if !hit.is_empty() && hit.len() * 5 >= q.len() {
                scored.push((hit.len(), &tool.tool_id, hit));
            }
        }
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(MAX_TOOLS);

    let agents = detect_agents(query);
    let mut rationale = String::new();
    for (n, id, hit) in &scored {
        let _ = write!(rationale, "{id}: matched [{}] score {n}/{}; ", hit.join(", "), q.len());
    }
    for (kind, words) in &agents {
        let _ = write!(rationale, "{kind}: [{}]; ", words.join(", "));
    }
    let rationale = match rationale.trim_end_matches("; ") {
        "" => "no tool or agent matched".to_string(),
        r => r.to_string(),
    };

    RoutingDecision {
        selected_tools: scored.into_iter().map(|(_, id, _)| id.to_string()).collect(),
        selected_agents: agents.into_iter().map(|(k, _)| k).collect(),
        rationale,
        policy: RoutingPolicy::Lexical,
    }
}

/// The routing prompt: tools with title/version/summary, the agents, recent
/// history and the constrained answer shape.
pub fn routing_prompt(query: &str, registry: &ToolRegistry, history: &[Turn]) -> String {
    let mut p = String::from(
        "You route questions for an industrial documentation assistant.\n\
         Choose the document tools and auxiliary agents needed to answer the question.\n\n\
         Tools:\n",
    );
    if registry.is_empty() {
        p.push_str("(none)\n");
    }
    for t in registry.list() {
        let _ = writeln!(p, "- {} | title: {} | version: {} | summary: {}", t.tool_id, t.title, t.version, t.summary);
    }
    p.push_str("\nAgents:\n");
    for a in AgentKind::ALL {
        let _ = writeln!(p, "- {}: {}", a, a.description());
    }
    if !history.is_empty() {
        p.push_str("\nRecent conversation:\n");
        for t in history {
            let _ = writeln!(p, "{}: {}", t.role.label(), t.text);
        }
    }
    let _ = write!(
        p,
        "\nQuestion: {query}\n\n\
         Reply with JSON only, exactly of the form {{\"tools\": [\"<tool_id>\", ...], \"agents\": [\"pdm\" | \"xai\" | \"iot\", ...]}}.\n"
    );
    p
}

#[derive(Deserialize)]
struct LlmRoute {
    #[serde(default)]
    tools: Vec<String>,
    #[serde(default)]
    agents: Vec<String>,
}

/// The first JSON object in `text` with the routing shape.
fn parse_route(text: &str) -> Option<LlmRoute> {
    let mut from = 0;
    while let Some(off) = text[from..].find('{') {
        let start = from + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<serde_json::Value>();
        if let Some(Ok(v)) = stream.next() {
            if v.is_object() {
                if let Ok(route) = serde_json::from_value::<LlmRoute>(v) {
                    return Some(route);
                }
            }
        }
        from = start + 1;
    }
    None
}

/// Model-driven routing. Unparseable output, or output whose names are all
/// invalid, falls back to [`route_lexical`]. With `fallback` off, failures
/// surface as errors.
pub fn route_llm(
    query: &str,
    registry: &ToolRegistry,
    history: &[Turn],
    llm: &dyn LlmProvider,
    temperature: f64,
    fallback: bool,
) -> Result<RoutingDecision, RouterError> {
    let fall = |why: String| -> Result<RoutingDecision, RouterError> {
        if !fallback {
            return Err(RouterError::ProviderUnavailable(why));
        }
        let mut d = route_lexical(query, registry);
        d.rationale = format!("llm routing fell back ({why}); {}", d.rationale);
        Ok(d)
    };
    let reply = match llm.complete(&routing_prompt(query, registry, history), temperature) {
        Ok(r) => r,
        Err(LlmError::Unavailable { reason, .. }) => return fall(format!("provider unavailable: {reason}")),
        Err(e) => return fall(e.to_string()),
    };
    let Some(route) = parse_route(&reply) else {
        return fall("unparseable reply".into());
    };

    let mut dropped = Vec::new();
    let mut tools: Vec<String> = Vec::new();
    for name in &route.tools {
        match registry.resolve(name) {
            Some(t) if !tools.contains(&t.tool_id) => tools.push(t.tool_id.clone()),
            Some(_) => {}
            None => dropped.push(name.clone()),
        }
    }
    tools.truncate(MAX_TOOLS);
    let mut agents: Vec<AgentKind> = Vec::new();
    for name in &route.agents {
        match name.parse::<AgentKind>() {
            Ok(a) if !agents.contains(&a) => agents.push(a),
            Ok(_) => {}
            Err(_) => dropped.push(name.clone()),
        }
    }

    let asked = !route.tools.is_empty() || !route.agents.is_empty();
    if asked && tools.is_empty() && agents.is_empty() {
        return fall(format!("no valid names in [{}]", dropped.join(", ")));
    }
    let mut rationale = format!(
        "llm selected tools [{}], agents [{}]",
        tools.join(", "),
        agents.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
    );
    if !dropped.is_empty() {
        let _ = write!(rationale, "; dropped unknown [{}]", dropped.join(", "));
    }
    Ok(RoutingDecision {
        selected_tools: tools,
        selected_agents: agents,
        rationale,
        policy: RoutingPolicy::Llm,
    })
}
