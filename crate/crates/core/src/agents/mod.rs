//! Auxiliary service agents: predictive maintenance (PdM), model explanations
//! (XAI) and IoT sensor readings.
//!
//! Each agent is an external HTTP+JSON service:
//!
//! ```text
//! GET {base}/pdm/{asset_id}
//! GET {base}/xai/{prediction_id}
//! GET {base}/iot/{device_id}?window_s=N
//! ```
//!
//! Payloads are validated into typed bodies and rendered into a plain-text
//! summary for prompt inclusion. Rendering depends on the body alone.

mod client;
mod mock;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{AgentClient, AgentEndpointConfig, AgentHub, AgentRequest};
pub use mock::{load_fixtures, mock_router, Fault, MockAgentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Pdm,
    Xai,
    Iot,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Pdm, AgentKind::Xai, AgentKind::Iot];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Pdm => "pdm",
            AgentKind::Xai => "xai",
            AgentKind::Iot => "iot",
        }
    }

    /// One-line description offered to the routing model.
    pub fn description(self) -> &'static str {
        match self {
            AgentKind::Pdm => "fetches predictive maintenance outputs (asset health, failure mode, horizon) from external services",
            AgentKind::Xai => "retrieves model explanations (feature attributions, narrative) from an explainable AI service",
            AgentKind::Iot => "acquires current and historical sensor readings from IoT devices",
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pdm" => Ok(AgentKind::Pdm),
            "xai" => Ok(AgentKind::Xai),
            "iot" => Ok(AgentKind::Iot),
            other => Err(format!("unknown agent '{other}' (expected pdm, xai or iot)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("agent {agent} unavailable: {reason}")]
    AgentUnavailable { agent: AgentKind, reason: String },
    #[error("agent {agent} sent a bad payload: {reason}")]
    BadPayload { agent: AgentKind, reason: String },
    #[error("invalid agent request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmBody {
    pub asset_id: String,
    pub health_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_failure_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_days: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub attribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XaiBody {
    pub prediction_id: String,
    pub top_features: Vec<Feature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub sensor: String,
    pub timestamp: DateTime<Utc>,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IotBody {
    pub device_id: String,
    pub readings: Vec<Reading>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentBody {
    Pdm(PdmBody),
    Xai(XaiBody),
    Iot(IotBody),
}

impl AgentBody {
    pub fn kind(&self) -> AgentKind {
        match self {
            AgentBody::Pdm(_) => AgentKind::Pdm,
            AgentBody::Xai(_) => AgentKind::Xai,
            AgentBody::Iot(_) => AgentKind::Iot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPayload {
    pub agent: AgentKind,
    pub fetched_at: DateTime<Utc>,
    pub body: AgentBody,
    pub summary_text: String,
}

impl AgentPayload {
    pub fn new(body: AgentBody, fetched_at: DateTime<Utc>) -> Self {
        AgentPayload {
            agent: body.kind(),
            fetched_at,
            summary_text: render_summary(&body),
            body,
        }
    }
}

static ENTITY_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[^A-Za-z0-9_])id:([A-Za-z0-9_-]+)").unwrap());

/// The first `id:<token>` entity in a query.
pub fn extract_entity_id(query: &str) -> Option<String> {
    ENTITY_RE.captures(query).map(|c| c[1].to_string())
}

// Wire shapes: identifiers are optional on the wire and default to the one
// requested.

#[derive(Deserialize)]
struct PdmWire {
    #[serde(default)]
    asset_id: Option<String>,
    health_score: f64,
    #[serde(default)]
    predicted_failure_mode: Option<String>,
    #[serde(default)]
    horizon_days: Option<u32>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FeatureWire {
    Named { name: String, attribution: f64 },
    Pair(String, f64),
}

#[derive(Deserialize)]
struct XaiWire {
    #[serde(default)]
    prediction_id: Option<String>,
    #[serde(default)]
    top_features: Vec<FeatureWire>,
    #[serde(default)]
    narrative: Option<String>,
}

#[derive(Deserialize)]
struct ReadingWire {
    sensor: String,
    timestamp: String,
    value: f64,
    #[serde(default)]
    unit: String,
}

#[derive(Deserialize)]
struct IotWire {
    #[serde(default)]
    device_id: Option<String>,
    #[serde(default)]
    readings: Vec<ReadingWire>,
}

/// Validate a raw response body for `agent`, requested with `id`.
pub fn parse_payload(agent: AgentKind, id: &str, raw: &[u8]) -> Result<AgentBody, AgentError> {
    let bad = |reason: String| AgentError::BadPayload { agent, reason };
    match agent {
        AgentKind::Pdm => {
            let w: PdmWire = serde_json::from_slice(raw).map_err(|e| bad(e.to_string()))?;
            if !w.health_score.is_finite() || !(0.0..=1.0).contains(&w.health_score) {
                return Err(bad(format!("health_score {} outside [0, 1]", w.health_score)));
            }
            Ok(AgentBody::Pdm(PdmBody {
                asset_id: w.asset_id.unwrap_or_else(|| id.to_string()),
                health_score: w.health_score,
                predicted_failure_mode: w.predicted_failure_mode.filter(|m| !m.trim().is_empty()),
                horizon_days: w.horizon_days,
            }))
        }
        AgentKind::Xai => {
            let w: XaiWire = serde_json::from_slice(raw).map_err(|e| bad(e.to_string()))?;
            let top_features: Vec<Feature> = w
                .top_features
                .into_iter()
                .map(|f| match f {
                    FeatureWire::Named { name, attribution } | FeatureWire::Pair(name, attribution) => {
                        Feature { name, attribution }
                    }
                })
                .collect();
            if let Some(f) = top_features.iter().find(|f| !f.attribution.is_finite()) {
                return Err(bad(format!("attribution of {} is not finite", f.name)));
            }
            let narrative = w.narrative.filter(|n| !n.trim().is_empty());
            if top_features.is_empty() && narrative.is_none() {
                return Err(bad("no features and no narrative".into()));
            }
            Ok(AgentBody::Xai(XaiBody {
                prediction_id: w.prediction_id.unwrap_or_else(|| id.to_string()),
                top_features,
                narrative,
            }))
        }
        AgentKind::Iot => {
            let w: IotWire = serde_json::from_slice(raw).map_err(|e| bad(e.to_string()))?;
            let mut readings = Vec::with_capacity(w.readings.len());
            for r in w.readings {
                let timestamp = DateTime::parse_from_rfc3339(&r.timestamp)
                    .map_err(|e| bad(format!("timestamp '{}': {e}", r.timestamp)))?
                    .with_timezone(&Utc);
                if !r.value.is_finite() {
                    return Err(bad(format!("{} reading is not finite", r.sensor)));
                }
                readings.push(Reading {
                    sensor: r.sensor,
                    timestamp,
                    value: r.value,
                    unit: r.unit,
                });
            }
            Ok(AgentBody::Iot(IotBody {
                device_id: w.device_id.unwrap_or_else(|| id.to_string()),
                readings,
            }))
        }
    }
}

/// Whole numbers keep one decimal ("3.0"); others print in shortest form.
fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn with_unit(v: f64, unit: &str) -> String {
    if unit.is_empty() {
        num(v)
    } else {
        format!("{} {unit}", num(v))
    }
}

pub fn render_summary(body: &AgentBody) -> String {
    match body {
        AgentBody::Pdm(b) => {
            let mut s = format!("PdM for asset {}: health score {}", b.asset_id, num(b.health_score));
            if let Some(m) = &b.predicted_failure_mode {
                let _ = write!(s, "; predicted failure mode: {m}");
            }
            if let Some(d) = b.horizon_days {
                let _ = write!(s, "; horizon: {d} days");
            }
            s
        }
        AgentBody::Xai(b) => {
            let mut feats: Vec<&Feature> = b.top_features.iter().collect();
            feats.sort_by(|x, y| {
                y.attribution
                    .abs()
                    .total_cmp(&x.attribution.abs())
                    .then_with(|| x.name.cmp(&y.name))
            });
            let mut s = format!("XAI for prediction {}:", b.prediction_id);
            if !feats.is_empty() {
                let list: Vec<String> = feats
                    .iter()
                    .map(|f| format!("{} ({}{})", f.name, if f.attribution < 0.0 { "" } else { "+" }, num(f.attribution)))
                    .collect();
                let _ = write!(s, " top features {}.", list.join(", "));
            }
            if let Some(n) = &b.narrative {
                let _ = write!(s, " {}", n.trim());
            }
            s
        }
        AgentBody::Iot(b) => {
            if b.readings.is_empty() {
                return format!("IoT for device {}: no readings in window", b.device_id);
            }
            let mut by_sensor: BTreeMap<&str, Vec<&Reading>> = BTreeMap::new();
            for r in &b.readings {
                by_sensor.entry(&r.sensor).or_default().push(r);
            }
            let mut s = format!("IoT for device {}:", b.device_id);
            for (sensor, rs) in by_sensor {
                // latest by timestamp; among equal timestamps the last listed
                let latest = rs
                    .iter()
                    .copied()
                    .reduce(|a, r| if r.timestamp >= a.timestamp { r } else { a })
                    .expect("non-empty");
                let min = rs.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
                let max = rs.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
                let _ = write!(
                    s,
                    "\n- {sensor}: latest {} at {}, min {}, max {} over {} reading(s)",
                    with_unit(latest.value, &latest.unit),
                    latest.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                    with_unit(min, &latest.unit),
                    with_unit(max, &latest.unit),
                    rs.len()
                );
            }
            s
        }
    }
}
