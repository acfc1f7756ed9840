//! C ABI for the indurag engine.
//!
//! Every function returns an [`IndStatus`]. On failure a message is kept
//! per thread and can be read with [`ind_last_error`] until the next call
//! on the same thread. Strings handed out through `out_*` parameters are
//! owned by the caller and released with [`ind_string_free`]. Structured
//! results are JSON text.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde_json::{json, Value};

use indurag::config::ServiceConfig;
use indurag::engine::{AnswerOptions, Engine, EngineConfig, EngineError, IngestOptions};
use indurag::ingest::{DocId, DocumentMeta, SourceFormat};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    Config = 4,
    Ingest = 5,
    NotFound = 6,
    EmptyQuery = 7,
    Unavailable = 8,
    Internal = 9,
    Panic = 10,
}

/// Opaque engine handle.
pub struct IndEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(IndStatus, String);

type Res<T> = Result<T, Failure>;

fn set_error(msg: Option<String>) {
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    });
}

fn engine_failure(e: EngineError) -> Failure {
    let status = match &e {
        _ if e.is_unknown_session() => IndStatus::NotFound,
        _ if e.is_provider_unavailable() => IndStatus::Unavailable,
        EngineError::EmptyQuery => IndStatus::EmptyQuery,
        EngineError::Config(_) => IndStatus::Config,
        EngineError::Ingest(_) | EngineError::Chunk(_) => IndStatus::Ingest,
        _ => IndStatus::Internal,
    };
    Failure(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Res<()>) -> IndStatus {
    set_error(None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IndStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(_) => {
            set_error(Some("internal panic".into()));
            IndStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err(Failure(IndStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(IndStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, name: &str) -> Res<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, name).map(Some)
    }
}

unsafe fn handle<'a>(p: *const IndEngine) -> Res<&'a Engine> {
    p.as_ref()
        .map(|h| &h.engine)
        .ok_or_else(|| Failure(IndStatus::NullArgument, "engine is NULL".into()))
}

fn check_out<T>(out: *mut T, name: &str) -> Res<()> {
    if out.is_null() {
        Err(Failure(IndStatus::NullArgument, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Res<()> {
    let c = CString::new(s).map_err(|_| Failure(IndStatus::Internal, "result contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn bad_json(what: &'static str) -> impl Fn(serde_json::Error) -> Failure {
    move |e| Failure(IndStatus::InvalidJson, format!("{what}: {e}"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ind_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next `ind_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ind_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ind_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Open an engine from engine configuration JSON; NULL means defaults.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ind_engine_open(config_json: *const c_char, out: *mut *mut IndEngine) -> IndStatus {
    guard(|| {
        check_out(out, "out")?;
        let cfg = match opt_text(config_json, "config_json")? {
            Some(s) => serde_json::from_str::<EngineConfig>(s).map_err(bad_json("config"))?,
            None => EngineConfig::default(),
        };
        let engine = Engine::open(cfg).map_err(engine_failure)?;
        *out = Box::into_raw(Box::new(IndEngine { engine }));
        Ok(())
    })
}

/// Open an engine from a TOML or JSON service configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ind_engine_open_file(path: *const c_char, out: *mut *mut IndEngine) -> IndStatus {
    guard(|| {
        check_out(out, "out")?;
        let path = text(path, "path")?;
        let cfg = ServiceConfig::load(Path::new(path)).map_err(|e| Failure(IndStatus::Config, e.to_string()))?;
        let engine = Engine::open(cfg.engine).map_err(engine_failure)?;
        *out = Box::into_raw(Box::new(IndEngine { engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be NULL or a handle from `ind_engine_open*`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ind_engine_free(engine: *mut IndEngine) {
    if !engine.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(engine))));
    }
}

/// Ingest one document. `format` is `markdown` (default when NULL) or
/// `plain`; `metadata_json` needs at least a `title`. `out_report_json`
/// may be NULL.
///
/// # Safety
/// Pointers must be valid NUL-terminated strings or NULL where allowed.
#[no_mangle]
pub unsafe extern "C" fn ind_ingest(
    engine: *const IndEngine,
    text_ptr: *const c_char,
    format: *const c_char,
    metadata_json: *const c_char,
    out_report_json: *mut *mut c_char,
) -> IndStatus {
    guard(|| {
        let engine = handle(engine)?;
        let body = text(text_ptr, "text")?;
        let format: SourceFormat = match opt_text(format, "format")? {
            Some(f) => f
                .parse()
                .map_err(|_| Failure(IndStatus::Ingest, format!("unknown format '{f}'")))?,
            None => SourceFormat::Markdown,
        };
        let meta: DocumentMeta =
            serde_json::from_str(text(metadata_json, "metadata_json")?).map_err(bad_json("metadata"))?;
        let report = engine
            .ingest(body.as_bytes(), format, &meta, &IngestOptions::default())
            .map_err(engine_failure)?;
        if !out_report_json.is_null() {
            let v = serde_json::to_string(&report).map_err(|e| Failure(IndStatus::Internal, e.to_string()))?;
            put_string(out_report_json, v)?;
        }
        Ok(())
    })
}

/// # Safety
/// `doc_id` must be a NUL-terminated string; `out_removed` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ind_remove_document(
    engine: *const IndEngine,
    doc_id: *const c_char,
    out_removed: *mut usize,
) -> IndStatus {
    guard(|| {
        let engine = handle(engine)?;
        let id = DocId(text(doc_id, "doc_id")?.to_string());
        let n = engine.remove_document(&id).map_err(engine_failure)?;
        if !out_removed.is_null() {
            *out_removed = n;
        }
        Ok(())
    })
}

/// # Safety
/// `out_count` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ind_index_count(engine: *const IndEngine, out_count: *mut usize) -> IndStatus {
    guard(|| {
        let engine = handle(engine)?;
        check_out(out_count, "out_count")?;
        *out_count = engine.index_count();
        Ok(())
    })
}

/// Top-`k` chunks as a JSON array of
/// `{doc_id, chunk_id, title, heading_path, text, score}`.
///
/// # Safety
/// `query` must be a NUL-terminated string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ind_search(
    engine: *const IndEngine,
    query: *const c_char,
    k: usize,
    out_json: *mut *mut c_char,
) -> IndStatus {
    guard(|| {
        let engine = handle(engine)?;
        check_out(out_json, "out_json")?;
        let hits = engine.search(text(query, "query")?, k, None).map_err(engine_failure)?;
        let v: Vec<Value> = hits
            .iter()
            .map(|h| {
                json!({
                    "doc_id": h.doc_id,
                    "chunk_id": h.chunk_id,
                    "title": h.title,
                    "heading_path": h.heading_path,
                    "text": h.text,
                    "score": h.score,
                })
            })
            .collect();
        put_string(out_json, Value::Array(v).to_string())
    })
}

/// # Safety
/// `out_session_id` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ind_session_create(engine: *const IndEngine, out_session_id: *mut *mut c_char) -> IndStatus {
    guard(|| {
        let engine = handle(engine)?;
        check_out(out_session_id, "out_session_id")?;
        let s = engine.create_session(None).map_err(engine_failure)?;
        put_string(out_session_id, s.session_id)
    })
}

/// The session with its turns as JSON.
///
/// # Safety
/// `session_id` must be a NUL-terminated string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ind_session_get(
    engine: *const IndEngine,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> IndStatus {
    guard(|| {
        let engine = handle(engine)?;
        check_out(out_json, "out_json")?;
        let s = engine.get_session(text(session_id, "session_id")?).map_err(engine_failure)?;
        let v = serde_json::to_string(&s).map_err(|e| Failure(IndStatus::Internal, e.to_string()))?;
        put_string(out_json, v)
    })
}

/// Deleting an unknown session succeeds.
///
/// # Safety
/// `session_id` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ind_session_delete(engine: *const IndEngine, session_id: *const c_char) -> IndStatus {
    guard(|| {
        let engine = handle(engine)?;
        engine
            .delete_session(text(session_id, "session_id")?)
            .map_err(engine_failure)
    })
}

/// Answer a query within a session. The JSON result carries `answer`,
/// `citations` (`doc_id`, `chunk_id`, `title`), `refused`, `tools_used`,
/// `agents_used` and `agent_failures`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ind_query(
    engine: *const IndEngine,
    session_id: *const c_char,
    query: *const c_char,
    out_json: *mut *mut c_char,
) -> IndStatus {
    guard(|| {
        let engine = handle(engine)?;
        check_out(out_json, "out_json")?;
        let sid = text(session_id, "session_id")?;
        let q = text(query, "query")?;
        let out = engine.answer(sid, q, &AnswerOptions::default()).map_err(engine_failure)?;
        let citations: Vec<Value> = out
            .turn
            .citations
            .iter()
            .map(|c| {
                let title = engine.document(&c.doc_id).map(|d| d.document.title.clone()).unwrap_or_default();
                json!({"doc_id": c.doc_id, "chunk_id": c.chunk_id, "title": title})
            })
            .collect();
        let failures: Vec<Value> = out
            .agent_failures
            .iter()
            .map(|(a, why)| json!({"agent": a.to_string(), "error": why}))
            .collect();
        let v = json!({
            "answer": out.turn.text,
            "citations": citations,
            "refused": out.refused,
            "tools_used": out.tools_used,
            "agents_used": out.agents_used.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            "agent_failures": failures,
        });
        put_string(out_json, v.to_string())
    })
}
