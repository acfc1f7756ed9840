//! Text-in/text-out completion providers.
//!
//! `test:echo` and `test:extractive` answer from the excerpts embedded in the
//! prompt and need no network; `remote:<model>` talks to an OpenAI-compatible
//! `chat/completions` endpoint.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub const CONTEXT_OPEN: &str = "<context>";
pub const CONTEXT_CLOSE: &str = "</context>";
pub const QUESTION_OPEN: &str = "<question>";
pub const QUESTION_CLOSE: &str = "</question>";

const RETRIES: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("llm provider {provider} unavailable: {reason}")]
    Unavailable { provider: String, reason: String },
    #[error("llm provider returned a malformed response: {0}")]
    BadResponse(String),
    #[error("invalid llm configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmSpec {
    pub provider_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl LlmSpec {
    pub fn named(provider_id: impl Into<String>) -> Self {
        LlmSpec {
            provider_id: provider_id.into(),
            endpoint: None,
            model: None,
            auth_env_var: None,
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn echo() -> Self {
        LlmSpec::named("test:echo")
    }
}

impl Default for LlmSpec {
    fn default() -> Self {
        LlmSpec::echo()
    }
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, LlmError>;

    fn probe(&self) -> bool {
        true
    }
}

pub fn build_llm(spec: &LlmSpec) -> Result<Arc<dyn LlmProvider>, LlmError> {
    match spec.provider_id.as_str() {
        "test:echo" => Ok(Arc::new(EchoLlm)),
        "test:extractive" => Ok(Arc::new(ExtractiveLlm)),
        "test:unavailable" => Ok(Arc::new(UnavailableLlm)),
        id if id.starts_with("remote:") => Ok(Arc::new(RemoteLlm::new(spec)?)),
        other => Err(LlmError::Config(format!(
            "unknown llm provider '{other}' (expected test:echo, test:extractive or remote:<model>)"
        ))),
    }
}

/// One `[doc_id:chunk_id]`-tagged excerpt found in a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptExcerpt {
    pub doc_id: String,
    pub chunk_id: String,
    pub text: String,
}

impl PromptExcerpt {
    pub fn tag(&self) -> String {
        format!("[{}:{}]", self.doc_id, self.chunk_id)
    }
}

pub static TAG_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[([A-Za-z0-9][A-Za-z0-9._-]*):([A-Za-z0-9][A-Za-z0-9._-]*)\]").unwrap()
});

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.rfind(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

/// Excerpts inside the prompt's context block. Each starts with a line whose
/// first token is its tag; the rest of that line is a source label.
pub fn prompt_excerpts(prompt: &str) -> Vec<PromptExcerpt> {
    let Some(block) = between(prompt, CONTEXT_OPEN, CONTEXT_CLOSE) else {
        return Vec::new();
    };
    let mut out: Vec<PromptExcerpt> = Vec::new();
    for line in block.lines() {
        let head = TAG_RE
            .captures(line)
            .filter(|c| c.get(0).is_some_and(|m| m.start() == 0));
        match (head, out.last_mut()) {
            (Some(c), _) => out.push(PromptExcerpt {
                doc_id: c[1].to_string(),
                chunk_id: c[2].to_string(),
                text: String::new(),
            }),
            (None, Some(cur)) => {
                cur.text.push_str(line);
                cur.text.push('\n');
            }
            (None, None) => {}
        }
    }
    for e in &mut out {
        e.text = e.text.trim().to_string();
    }
    out
}

pub fn prompt_question(prompt: &str) -> Option<String> {
    between(prompt, QUESTION_OPEN, QUESTION_CLOSE).map(|q| q.trim().to_string())
}

fn squash(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Replies with the excerpt that contains the question verbatim (else the
/// first excerpt), followed by its tag.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoLlm;

impl LlmProvider for EchoLlm {
    fn id(&self) -> &str {
        "test:echo"
    }

    fn complete(&self, prompt: &str, _temperature: f64) -> Result<String, LlmError> {
        let excerpts = prompt_excerpts(prompt);
        let question = prompt_question(prompt).unwrap_or_default();
        let needle = squash(&question);
        let pick = excerpts
            .iter()
            .find(|e| !needle.is_empty() && squash(&e.text).contains(&needle))
            .or_else(|| excerpts.first());
        Ok(match pick {
            Some(e) => format!("{} {}", e.text, e.tag()),
            None => format!("No excerpt available for: {question}"),
        })
    }
}

/// Concatenation of every excerpt, each followed by its tag.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExtractiveLlm;

impl LlmProvider for ExtractiveLlm {
    fn id(&self) -> &str {
        "test:extractive"
    }

    fn complete(&self, prompt: &str, _temperature: f64) -> Result<String, LlmError> {
        Ok(prompt_excerpts(prompt)
            .iter()
            .map(|e| format!("{} {}", e.text, e.tag()))
            .collect::<Vec<_>>()
            .join("\n\n"))
    }
}

/// Always fails; stands in for an unreachable model.
#[derive(Debug, Default, Clone, Copy)]
pub struct UnavailableLlm;

impl LlmProvider for UnavailableLlm {
    fn id(&self) -> &str {
        "test:unavailable"
    }

    fn complete(&self, _prompt: &str, _temperature: f64) -> Result<String, LlmError> {
        Err(LlmError::Unavailable {
            provider: self.id().into(),
            reason: "configured as unavailable".into(),
        })
    }

    fn probe(&self) -> bool {
        false
    }
}

type Script = dyn Fn(&str) -> Result<String, LlmError> + Send + Sync;

/// Test double driven by a closure; counts its calls.
pub struct ScriptedLlm {
    script: Box<Script>,
    calls: AtomicUsize,
}

impl ScriptedLlm {
    pub fn new(f: impl Fn(&str) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        ScriptedLlm {
            script: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        ScriptedLlm::new(move |_| Ok(reply.clone()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmProvider for ScriptedLlm {
    fn id(&self) -> &str {
        "test:scripted"
    }

    fn complete(&self, prompt: &str, _temperature: f64) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.script)(prompt)
    }
}

/// OpenAI-compatible chat completion client.
pub struct RemoteLlm {
    id: String,
    model: String,
    endpoint: String,
    auth_env_var: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl RemoteLlm {
    pub fn new(spec: &LlmSpec) -> Result<Self, LlmError> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::Config(format!("{}: missing endpoint", spec.provider_id)))?;
        let model = spec.model.clone().unwrap_or_else(|| {
            spec.provider_id.trim_start_matches("remote:").to_string()
        });
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_millis(spec.timeout_ms.max(1)))
            .build();
        Ok(RemoteLlm {
            id: spec.provider_id.clone(),
            model,
            endpoint,
            auth_env_var: spec.auth_env_var.clone(),
            agent,
        })
    }

    fn unavailable(&self, reason: impl Into<String>) -> LlmError {
        LlmError::Unavailable {
            provider: self.id.clone(),
            reason: reason.into(),
        }
    }
}

impl LlmProvider for RemoteLlm {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, LlmError> {
        let auth = match &self.auth_env_var {
            None => None,
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| self.unavailable(format!("environment variable {var} is not set")))?,
            ),
        };
        let body = json!({
            "model": self.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut delay = Duration::from_millis(500);
        let mut last_err = String::new();
        for attempt in 0..=RETRIES {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let mut req = self.agent.post(&self.endpoint);
            if let Some(token) = &auth {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(&body) {
                Ok(resp) => {
                    let parsed: CompletionResponse = resp
                        .into_json()
                        .map_err(|e| LlmError::BadResponse(e.to_string()))?;
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| LlmError::BadResponse("no choices".into()));
                }
                Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                    last_err = format!("HTTP {code}");
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(self.unavailable(format!("HTTP {code}")))
                }
                Err(ureq::Error::Transport(t)) => last_err = t.to_string(),
            }
        }
        Err(self.unavailable(last_err))
    }

    fn probe(&self) -> bool {
        crate::http::endpoint_reachable(&self.endpoint)
    }
}
