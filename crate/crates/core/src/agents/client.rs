use std::collections::BTreeMap;
use std::io::Read;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{parse_payload, AgentError, AgentKind, AgentPayload};

const MAX_BODY_BYTES: u64 = 4 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentEndpointConfig {
    pub agent: AgentKind,
    pub base_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    3000
}

fn default_retries() -> u32 {
    2
}

impl AgentEndpointConfig {
    pub fn new(agent: AgentKind, base_url: impl Into<String>) -> Self {
        AgentEndpointConfig {
            agent,
            base_url: base_url.into(),
            auth_env_var: None,
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
        }
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.timeout_ms == 0 {
            return Err(AgentError::InvalidRequest(format!("{}: timeout_ms must be positive", self.agent)));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(AgentError::InvalidRequest(format!(
                "{}: base_url must be an http(s) URL, got '{}'",
                self.agent, self.base_url
            )));
        }
        Ok(())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Blocking client for one agent service.
#[derive(Debug)]
pub struct AgentClient {
    cfg: AgentEndpointConfig,
    http: ureq::Agent,
}

impl AgentClient {
    pub fn new(cfg: AgentEndpointConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let http = ureq::AgentBuilder::new().build();
        Ok(AgentClient { cfg, http })
    }

    pub fn config(&self) -> &AgentEndpointConfig {
        &self.cfg
    }

    pub fn fetch_pdm(&self, asset_id: &str) -> Result<AgentPayload, AgentError> {
        self.expect(AgentKind::Pdm)?;
        self.fetch(asset_id, None)
    }

    pub fn fetch_xai(&self, prediction_id: &str) -> Result<AgentPayload, AgentError> {
        self.expect(AgentKind::Xai)?;
        self.fetch(prediction_id, None)
    }

    pub fn fetch_iot(&self, device_id: &str, window: Duration) -> Result<AgentPayload, AgentError> {
        self.expect(AgentKind::Iot)?;
        if window.is_zero() {
            return Err(AgentError::InvalidRequest("window must be positive".into()));
        }
        self.fetch(device_id, Some(window.as_secs().max(1)))
    }

    fn expect(&self, kind: AgentKind) -> Result<(), AgentError> {
        if self.cfg.agent == kind {
            Ok(())
        } else {
            Err(AgentError::InvalidRequest(format!("client is configured for {}", self.cfg.agent)))
        }
    }

    /// Fetch within this client's own `timeout_ms`, retries included.
    pub fn fetch(&self, id: &str, window_s: Option<u64>) -> Result<AgentPayload, AgentError> {
        let deadline = Instant::now() + Duration::from_millis(self.cfg.timeout_ms);
        self.fetch_until(id, window_s, deadline)
    }

    fn fetch_until(&self, id: &str, window_s: Option<u64>, deadline: Instant) -> Result<AgentPayload, AgentError> {
        let agent = self.cfg.agent;
        if !valid_id(id) {
            return Err(AgentError::InvalidRequest(format!("invalid {agent} identifier '{id}'")));
        }
        let mut url = crate::http::join_url(&self.cfg.base_url, &format!("{agent}/{id}"));
        if agent == AgentKind::Iot {
            url.push_str(&format!("?window_s={}", window_s.unwrap_or(3600)));
        }
        let auth = match &self.cfg.auth_env_var {
            None => None,
            Some(var) => Some(std::env::var(var).map_err(|_| AgentError::AgentUnavailable {
                agent,
                reason: format!("environment variable {var} is not set"),
            })?),
        };
        let unavailable = |reason: String| AgentError::AgentUnavailable { agent, reason };

        let mut backoff = Duration::from_millis(50);
        let mut last = "deadline exceeded".to_string();
        for attempt in 0..=self.cfg.retries {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            if attempt > 0 {
                std::thread::sleep(backoff.min(remaining));
                backoff *= 2;
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            let mut req = self.http.get(&url).timeout(remaining);
            if let Some(token) = &auth {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            match req.call() {
                Ok(resp) => {
                    let mut raw = Vec::new();
                    if let Err(e) = resp.into_reader().take(MAX_BODY_BYTES).read_to_end(&mut raw) {
                        last = e.to_string();
                        continue;
                    }
                    let body = parse_payload(agent, id, &raw)?;
                    return Ok(AgentPayload::new(body, Utc::now()));
                }
                Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                    last = format!("HTTP {code}");
                }
                Err(ureq::Error::Status(code, _)) => return Err(unavailable(format!("HTTP {code}"))),
                Err(ureq::Error::Transport(t)) => last = t.to_string(),
            }
        }
        Err(unavailable(last))
    }

    pub fn probe(&self) -> bool {
        crate::http::endpoint_reachable(&self.cfg.base_url)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRequest {
    pub agent: AgentKind,
    pub id: String,
}

/// All configured agent clients. Fetches for one answer run concurrently,
/// each bounded by its own timeout, so the batch finishes within the
/// largest of them.
#[derive(Debug, Default)]
pub struct AgentHub {
    clients: BTreeMap<AgentKind, AgentClient>,
    iot_window_s: u64,
}

impl AgentHub {
    pub fn new(configs: &[AgentEndpointConfig], iot_window_s: u64) -> Result<Self, AgentError> {
        let mut clients = BTreeMap::new();
        for cfg in configs {
            if clients.insert(cfg.agent, AgentClient::new(cfg.clone())?).is_some() {
                return Err(AgentError::InvalidRequest(format!("agent {} configured twice", cfg.agent)));
            }
        }
        Ok(AgentHub {
            clients,
            iot_window_s: iot_window_s.max(1),
        })
    }

    pub fn is_configured(&self, kind: AgentKind) -> bool {
        self.clients.contains_key(&kind)
    }

    pub fn client(&self, kind: AgentKind) -> Option<&AgentClient> {
        self.clients.get(&kind)
    }

    /// Results in request order.
    pub fn fetch_all(&self, requests: &[AgentRequest]) -> Vec<(AgentKind, Result<AgentPayload, AgentError>)> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = requests
                .iter()
                .map(|r| {
                    scope.spawn(move || match self.clients.get(&r.agent) {
                        None => Err(AgentError::AgentUnavailable {
                            agent: r.agent,
                            reason: "no endpoint configured".into(),
                        }),
                        Some(c) => c.fetch(&r.id, Some(self.iot_window_s)),
                    })
                })
                .collect();
            requests
                .iter()
                .zip(handles)
                .map(|(r, h)| {
                    let res = h.join().unwrap_or_else(|_| {
                        Err(AgentError::AgentUnavailable {
                            agent: r.agent,
                            reason: "client panicked".into(),
                        })
                    });
                    (r.agent, res)
                })
                .collect()
        })
    }

    pub fn reachability(&self) -> BTreeMap<String, bool> {
        self.clients
            .iter()
            .map(|(k, c)| (format!("agent:{k}"), c.probe()))
            .collect()
    }
}
