mod common;

use std::sync::Arc;

use common::*;
use indurag::engine::{EngineConfig, EngineParts};
use indurag::llm::{LlmProvider, UnavailableLlm};
use indurag::router::RoutingPolicy;
use indurag::service::ServiceOptions;
use serde_json::{json, Value};

fn manual() -> String {
    std::fs::read_to_string(fixtures().join("robot_arm_manual.md")).unwrap()
}

fn lexical() -> EngineConfig {
    EngineConfig {
        routing: RoutingPolicy::Lexical,
        ..EngineConfig::default()
    }
}

fn ingest_manual(r: &Running, version: &str, text: &str) -> Value {
    let (status, body) = call(
        "POST",
        &r.url("/v1/documents"),
        Some(KEY),
        Some(&json!({
            "text": text,
            "format": "markdown",
            "metadata": {"title": "Robot Arm Service Manual", "version": version}
        })),
    );
    assert_eq!(status, 201, "{body}");
    body
}

fn new_session(r: &Running) -> String {
    let (status, body) = call("POST", &r.url("/v1/sessions"), Some(KEY), None);
    assert_eq!(status, 201, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

#[test]
fn health_needs_no_key_and_counts_chunks() {
    let r = start(lexical(), EngineParts::default(), quiet());
    let (status, body) = call("GET", &r.url("/v1/health"), None, None);
    assert_eq!(status, 200);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["index_count"], 0);
    assert!(body["providers"].as_object().unwrap().contains_key("llm:test:echo"));

    let doc = ingest_manual(&r, "1", &manual());
    assert_eq!(doc["chunk_count"], 3);
    assert!(doc["tool_id"].as_str().unwrap().starts_with("tool-"));
    let (_, body) = call("GET", &r.url("/v1/health"), None, None);
    assert_eq!(body["index_count"], 3);
}

#[test]
fn protected_endpoints_need_a_valid_key() {
    let r = start(lexical(), EngineParts::default(), quiet());
    for (method, path) in [
        ("GET", "/v1/tools"),
        ("POST", "/v1/sessions"),
        ("GET", "/v1/sessions/abc"),
        ("DELETE", "/v1/sessions/abc"),
        ("POST", "/v1/sessions/abc/query"),
        ("POST", "/v1/documents"),
    ] {
        for key in [None, Some("ik_wrong")] {
            let (status, body) = call(method, &r.url(path), key, None);
            assert_eq!(status, 401, "{method} {path}");
            assert_eq!(body, json!({"error": "unauthorized"}));
        }
    }
    let (status, body) = call("GET", &r.url("/v1/tools"), Some(KEY), None);
    assert_eq!(status, 200);
    assert_eq!(body, json!([]));
}

#[test]
fn session_lifecycle() {
    let r = start(lexical(), EngineParts::default(), quiet());
    let id = new_session(&r);
    let (status, body) = call("GET", &r.url(&format!("/v1/sessions/{id}")), Some(KEY), None);
    assert_eq!(status, 200);
    assert_eq!(body["turns"], json!([]));
    assert_eq!(call("GET", &r.url("/v1/sessions/unknown1"), Some(KEY), None).0, 404);
    for _ in 0..2 {
        assert_eq!(call("DELETE", &r.url(&format!("/v1/sessions/{id}")), Some(KEY), None).0, 204);
    }
    assert_eq!(call("GET", &r.url(&format!("/v1/sessions/{id}")), Some(KEY), None).0, 404);
}

#[test]
fn query_cites_with_titles_and_refuses_unroutable() {
    let r = start(lexical(), EngineParts::default(), quiet());
    ingest_manual(&r, "1", &manual());
    let id = new_session(&r);
    let q = r.url(&format!("/v1/sessions/{id}/query"));

    let (status, body) = call("POST", &q, Some(KEY), Some(&json!({"text": "lithium grease to the elbow joint"})));
    assert_eq!(status, 200, "{body}");
    let cites = body["citations"].as_array().unwrap();
    assert!(!cites.is_empty());
    for c in cites {
        assert_eq!(c["title"], "Robot Arm Service Manual");
    }
    assert_eq!(body["tools_used"].as_array().unwrap().len(), 1);
    assert!(body["latency_ms"].is_u64());

    let (status, body) = call("POST", &q, Some(KEY), Some(&json!({"text": "cafeteria menu prices"})));
    assert_eq!(status, 200);
    assert_eq!(body["citations"], json!([]));
    assert_eq!(body["refused"], true);

    assert_eq!(call("POST", &q, Some(KEY), Some(&json!({"text": "   "}))).0, 422);
    assert_eq!(call("POST", &q, Some(KEY), Some(&json!({}))).0, 422);
    let (status, _) = call(
        "POST",
        &r.url("/v1/sessions/nope/query"),
        Some(KEY),
        Some(&json!({"text": "torque"})),
    );
    assert_eq!(status, 404);

    let (_, hist) = call("GET", &r.url(&format!("/v1/sessions/{id}")), Some(KEY), None);
    assert_eq!(hist["turns"].as_array().unwrap().len(), 4);
}

#[test]
fn unavailable_llm_is_503_and_appends_nothing() {
    let llm: Arc<dyn LlmProvider> = Arc::new(UnavailableLlm);
    let r = start(
        lexical(),
        EngineParts {
            llm: Some(llm),
            embedder: None,
        },
        quiet(),
    );
    ingest_manual(&r, "1", &manual());
    let id = new_session(&r);
    let (status, body) = call(
        "POST",
        &r.url(&format!("/v1/sessions/{id}/query")),
        Some(KEY),
        Some(&json!({"text": "wrist flange bolts torque"})),
    );
    assert_eq!(status, 503, "{body}");
    let (_, hist) = call("GET", &r.url(&format!("/v1/sessions/{id}")), Some(KEY), None);
    assert_eq!(hist["turns"], json!([]));
}

#[test]
fn repost_replaces_content() {
    let r = start(lexical(), EngineParts::default(), quiet());
    let first = ingest_manual(&r, "1", &manual());
    let changed = manual().replace("lithium grease", "synthetic polyurea grease");
    let second = ingest_manual(&r, "1", &changed);
    assert_eq!(first["doc_id"], second["doc_id"]);
    assert_eq!(second["replaced"], true);
    let (_, tools) = call("GET", &r.url("/v1/tools"), Some(KEY), None);
    assert_eq!(tools.as_array().unwrap().len(), 1);
    assert_eq!(r.engine.index_count(), 3);

    let hits = r.engine.search("lithium grease elbow joint", 10, None).unwrap();
    assert!(hits.iter().all(|h| !h.text.contains("lithium")));
    assert!(hits.iter().any(|h| h.text.contains("polyurea")));
}

#[test]
fn multipart_upload_and_bad_payloads() {
    let r = start(lexical(), EngineParts::default(), quiet());
    let raw = manual();
    let (ct, body) = multipart(&[
        ("file", Some("arm.md"), raw.as_bytes()),
        ("title", None, b"Robot Arm Service Manual"),
        ("version", None, b"2"),
        ("strategy", None, b"fixed"),
        ("max_chars", None, b"256"),
    ]);
    let (status, out) = post_raw(&r.url("/v1/documents"), Some(KEY), &ct, &body);
    assert_eq!(status, 201, "{out}");
    assert!(out["chunk_count"].as_u64().unwrap() > 3);
    let (_, tools) = call("GET", &r.url("/v1/tools"), Some(KEY), None);
    assert_eq!(tools[0]["version"], "2");

    let (ct, body) = multipart(&[("title", None, b"x")]);
    assert_eq!(post_raw(&r.url("/v1/documents"), Some(KEY), &ct, &body).0, 400);
    assert_eq!(post_raw(&r.url("/v1/documents"), Some(KEY), "application/json", b"{oops").0, 400);
    let (status, _) = call(
        "POST",
        &r.url("/v1/documents"),
        Some(KEY),
        Some(&json!({"text": "  ", "metadata": {"title": "Blank"}})),
    );
    assert_eq!(status, 400);
}

#[test]
fn oversize_payload_is_413() {
    let opts = ServiceOptions {
        max_body_bytes: 4096,
        ..quiet()
    };
    let r = start(lexical(), EngineParts::default(), opts);
    let big = "word ".repeat(1200);
    let (status, body) = call(
        "POST",
        &r.url("/v1/documents"),
        Some(KEY),
        Some(&json!({"text": big, "metadata": {"title": "Big"}})),
    );
    assert_eq!(status, 413, "{body}");
    let (ct, body) = multipart(&[("file", Some("big.md"), big.as_bytes()), ("title", None, b"Big")]);
    assert_eq!(post_raw(&r.url("/v1/documents"), Some(KEY), &ct, &body).0, 413);
    // without a key the size is never looked at
    assert_eq!(post_raw(&r.url("/v1/documents"), None, &ct, &body).0, 401);
}

#[test]
fn failed_auth_leaves_data_dir_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EngineConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..lexical()
    };
    let r = start(cfg, EngineParts::default(), quiet());
    ingest_manual(&r, "1", &manual());
    let id = new_session(&r);
    let before = snapshot_dir(dir.path());
    let doc = json!({"text": "# New\n\nbody text", "metadata": {"title": "New"}});
    let q = json!({"text": "torque"});
    for key in [None, Some("ik_wrong")] {
        assert_eq!(call("POST", &r.url("/v1/documents"), key, Some(&doc)).0, 401);
        assert_eq!(call("POST", &r.url("/v1/sessions"), key, None).0, 401);
        assert_eq!(call("POST", &r.url(&format!("/v1/sessions/{id}/query")), key, Some(&q)).0, 401);
        assert_eq!(call("DELETE", &r.url(&format!("/v1/sessions/{id}")), key, None).0, 401);
    }
    assert_eq!(snapshot_dir(dir.path()), before);
}

#[test]
fn cors_allows_configured_origin_only() {
    let opts = ServiceOptions {
        cors_origins: vec!["http://localhost:5173".into()],
        ..quiet()
    };
    let r = start(lexical(), EngineParts::default(), opts);
    let pre = |origin: &str| {
        ureq::request("OPTIONS", &r.url("/v1/tools"))
            .set("origin", origin)
            .set("access-control-request-method", "GET")
            .set("access-control-request-headers", "x-api-key")
            .call()
            .map(|resp| resp.header("access-control-allow-origin").map(str::to_string))
            .unwrap_or(None)
    };
    assert_eq!(pre("http://localhost:5173").as_deref(), Some("http://localhost:5173"));
    assert_eq!(pre("http://evil.example"), None);
}
