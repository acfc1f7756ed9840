//! Service configuration, loaded from one TOML or JSON file.
//!
//! The engine settings sit at the top level beside the service settings:
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! data_dir = "data"
//! k = 5
//! cors_origins = ["http://localhost:5173"]
//!
//! [llm]
//! provider_id = "test:echo"
//!
//! [[agents]]
//! agent = "pdm"
//! base_url = "http://127.0.0.1:9100"
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineConfig;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_BODY_BYTES: usize = 20 * 1024 * 1024;
pub const DEFAULT_HEALTH_REFRESH_S: u64 = 30;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("unknown configuration key(s): {0}")]
    UnknownKeys(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn default_bind() -> String {
    DEFAULT_BIND.to_string()
}

fn default_max_body() -> usize {
    DEFAULT_MAX_BODY_BYTES
}

fn default_refresh() -> u64 {
    DEFAULT_HEALTH_REFRESH_S
}

/// Benchmark settings; the provider and index settings come from the
/// engine part of the same file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    /// Directory of `.md`/`.txt` documents (with optional sidecars).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_dir: Option<PathBuf>,
    /// Variant names per axis; empty means the built-in defaults.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunking: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vector_store: Vec<String>,
    /// `extractive` (default) or `llm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// `rule` (default) or `llm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Defaults to `<data_dir>/keys.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys_file: Option<PathBuf>,
    #[serde(default)]
    pub cors_origins: Vec<String>,
    #[serde(default = "default_max_body")]
    pub max_body_bytes: usize,
    #[serde(default = "default_refresh")]
    pub health_refresh_s: u64,
    #[serde(default)]
    pub bench: BenchSettings,
    #[serde(flatten)]
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: default_bind(),
            keys_file: None,
            cors_origins: Vec::new(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            health_refresh_s: DEFAULT_HEALTH_REFRESH_S,
            bench: BenchSettings::default(),
            engine: EngineConfig::default(),
        }
    }
}

const SERVICE_KEYS: &[&str] = &[
    "bind",
    "keys_file",
    "cors_origins",
    "max_body_bytes",
    "health_refresh_s",
    "bench",
];

const ENGINE_KEYS: &[&str] = &[
    "data_dir",
    "chunker",
    "embedding",
    "embedding_cache",
    "index",
    "llm",
    "agents",
    "iot_window_s",
    "routing",
    "llm_routing_fallback",
    "grounding_required",
    "refusal_text",
    "k",
    "history_window",
    "temperature",
    "system_prompt",
    "prompt_template",
];

enum Syntax {
    Toml,
    Json,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.into(),
            reason: e.to_string(),
        })?;
        let syntax = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Syntax::Toml,
            Some("json") => Syntax::Json,
            _ if text.trim_start().starts_with('{') => Syntax::Json,
            _ => Syntax::Toml,
        };
        let mut cfg = ServiceConfig::parse(&text, syntax).map_err(|e| match e {
            ConfigError::Parse { reason, .. } => ConfigError::Parse {
                path: path.into(),
                reason,
            },
            other => other,
        })?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.engine.data_dir.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.keys_file.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.engine.prompt_template.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.bench.corpus_dir.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        ServiceConfig::parse(text, Syntax::Toml)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        ServiceConfig::parse(text, Syntax::Json)
    }

    fn parse(text: &str, syntax: Syntax) -> Result<Self, ConfigError> {
        let parse_err = |reason: String| ConfigError::Parse {
            path: PathBuf::new(),
            reason,
        };
        let value: serde_json::Value = match syntax {
            Syntax::Toml => toml::from_str(text).map_err(|e| parse_err(e.to_string()))?,
            Syntax::Json => serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?,
        };
        let Some(obj) = value.as_object() else {
            return Err(parse_err("top level must be a table/object".into()));
        };
        let known: BTreeSet<&str> = SERVICE_KEYS.iter().chain(ENGINE_KEYS).copied().collect();
        let unknown: Vec<&str> = obj.keys().map(String::as_str).filter(|k| !known.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown.join(", ")));
        }
        serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))
    }

    pub fn keys_path(&self) -> Option<PathBuf> {
        self.keys_file
            .clone()
            .or_else(|| self.engine.data_dir.as_ref().map(|d| d.join("keys.json")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.engine.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.bind.parse::<std::net::SocketAddr>().is_err() {
            return Err(ConfigError::Invalid(format!("bind '{}' is not host:port", self.bind)));
        }
        if self.max_body_bytes == 0 {
            return Err(ConfigError::Invalid("max_body_bytes must be positive".into()));
        }
        for o in &self.cors_origins {
            if !(o.starts_with("http://") || o.starts_with("https://")) {
                return Err(ConfigError::Invalid(format!("cors origin '{o}' must be an http(s) origin")));
            }
        }
        Ok(())
    }
}
