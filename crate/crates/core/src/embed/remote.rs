//! HTTP embedding provider.
//!
//! Wire protocol: `POST {endpoint}` with `{"texts": [...]}`, answered by
//! `{"vectors": [[...], ...]}`. Transport errors, 429 and 5xx are retried
//! three times with exponential backoff (0.5 s, 1 s, 2 s).

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider, EmbeddingProviderSpec};

const RETRIES: u32 = 3;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

pub struct RemoteProvider {
    spec: EmbeddingProviderSpec,
    endpoint: String,
    agent: ureq::Agent,
    backoff_base: Duration,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("provider_id", &self.spec.provider_id)
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

impl RemoteProvider {
    pub fn new(spec: EmbeddingProviderSpec) -> Result<Self, EmbedError> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| EmbedError::Config(format!("{}: missing endpoint", spec.provider_id)))?;
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_secs(60))
            .build();
        Ok(RemoteProvider {
            spec,
            endpoint,
            agent,
            backoff_base: Duration::from_millis(500),
        })
    }

    /// Override the first backoff delay (tests use a few milliseconds).
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn unavailable(&self, attempts: u32, reason: impl Into<String>) -> EmbedError {
        EmbedError::ProviderUnavailable {
            provider: self.spec.provider_id.clone(),
            attempts,
            reason: reason.into(),
        }
    }

    fn auth_header(&self) -> Result<Option<String>, EmbedError> {
        match &self.spec.auth_env_var {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(|token| Some(format!("Bearer {token}")))
                .map_err(|_| self.unavailable(0, format!("environment variable {var} is not set"))),
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn spec(&self) -> &EmbeddingProviderSpec {
        &self.spec
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let auth = self.auth_header()?;
        let body = EmbedRequest { texts };
        let mut delay = self.backoff_base;
        let mut last_err = String::new();
        for attempt in 0..=RETRIES {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let mut req = self.agent.post(&self.endpoint);
            if let Some(h) = &auth {
                req = req.set("Authorization", h);
            }
            match req.send_json(&body) {
                Ok(resp) => {
                    let parsed: EmbedResponse = resp
                        .into_json()
                        .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
                    return Ok(parsed.vectors);
                }
                Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                    last_err = format!("HTTP {code}");
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(self.unavailable(attempt + 1, format!("HTTP {code}")));
                }
                Err(ureq::Error::Transport(t)) => last_err = t.to_string(),
            }
        }
        Err(self.unavailable(RETRIES + 1, last_err))
    }

    fn probe(&self) -> bool {
        crate::http::endpoint_reachable(&self.endpoint)
    }
}
