#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use indurag::engine::{Engine, EngineConfig, EngineParts};
use indurag::http::BackgroundServer;
use indurag::service::{hash_key, ApiKeyRecord, KeyStore, Service, ServiceOptions};
use serde_json::Value;

pub const KEY: &str = "ik_test_key_for_integration";

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn keys() -> KeyStore {
    KeyStore::fixed(vec![ApiKeyRecord {
        label: "tests".into(),
        key_hash: hash_key(KEY),
        enabled: true,
        created_at: None,
    }])
}

pub fn quiet() -> ServiceOptions {
    ServiceOptions {
        log_requests: false,
        ..ServiceOptions::default()
    }
}

pub struct Running {
    pub server: BackgroundServer,
    pub engine: Arc<Engine>,
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.server.url(), path)
    }
}

pub fn start(cfg: EngineConfig, parts: EngineParts, opts: ServiceOptions) -> Running {
    let engine = Arc::new(Engine::open_with(cfg, parts).unwrap());
    let service = Service::new(engine.clone(), keys(), opts);
    Running {
        server: BackgroundServer::local(service.router()).unwrap(),
        engine,
    }
}

/// Status and JSON body (Null when empty).
pub fn call(method: &str, url: &str, key: Option<&str>, body: Option<&Value>) -> (u16, Value) {
    let mut req = ureq::request(method, url);
    if let Some(k) = key {
        req = req.set("x-api-key", k);
    }
    let res = match body {
        Some(b) => req.send_json(b.clone()),
        None => req.call(),
    };
    let resp = match res {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("{method} {url}: {e}"),
    };
    let status = resp.status();
    let text = resp.into_string().unwrap_or_default();
    let v = if text.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&text).unwrap_or(Value::String(text))
    };
    (status, v)
}

/// POST a raw body with a content type.
pub fn post_raw(url: &str, key: Option<&str>, content_type: &str, body: &[u8]) -> (u16, Value) {
    let mut req = ureq::post(url).set("content-type", content_type);
    if let Some(k) = key {
        req = req.set("x-api-key", k);
    }
    let resp = match req.send_bytes(body) {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("POST {url}: {e}"),
    };
    let status = resp.status();
    let text = resp.into_string().unwrap_or_default();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

pub fn multipart(fields: &[(&str, Option<&str>, &[u8])]) -> (String, Vec<u8>) {
    let boundary = "----induragtestboundary";
    let mut body = Vec::new();
    for (name, filename, data) in fields {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\n\r\n").as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

/// Every file under `dir` with its bytes, sorted by path.
pub fn snapshot_dir(dir: &std::path::Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p, bytes));
            }
        }
    }
    out.sort();
    out
}
