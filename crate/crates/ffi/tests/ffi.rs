use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use indurag_ffi::*;
use serde_json::Value;

const MANUAL: &str = "# Torque Settings\n\nTighten the wrist flange bolts to 45 Nm in a star pattern.\n\n# Lubrication\n\nApply lithium grease to the elbow joint every 500 operating hours.\n";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    ind_string_free(p);
    s
}

unsafe fn last_error() -> String {
    let p = ind_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

unsafe fn open(cfg: Option<&str>) -> *mut IndEngine {
    let mut eng = ptr::null_mut();
    let cfg = cfg.map(c);
    let st = ind_engine_open(cfg.as_ref().map_or(ptr::null(), |s| s.as_ptr()), &mut eng);
    assert_eq!(st, IndStatus::Ok);
    eng
}

#[test]
fn ingest_query_and_sessions() {
    unsafe {
        let eng = open(Some(r#"{"routing":"lexical"}"#));
        let mut report = ptr::null_mut();
        let st = ind_ingest(eng, c(MANUAL).as_ptr(), ptr::null(), c(r#"{"title":"Arm Manual"}"#).as_ptr(), &mut report);
        assert_eq!(st, IndStatus::Ok);
        let report: Value = serde_json::from_str(&take(report)).unwrap();
        assert_eq!(report["chunk_count"], 2);
        let mut n = 0usize;
        assert_eq!(ind_index_count(eng, &mut n), IndStatus::Ok);
        assert_eq!(n, 2);

        let mut hits = ptr::null_mut();
        assert_eq!(ind_search(eng, c("lithium grease").as_ptr(), 1, &mut hits), IndStatus::Ok);
        let hits: Value = serde_json::from_str(&take(hits)).unwrap();
        assert_eq!(hits[0]["heading_path"][0], "Lubrication");

        let mut sid = ptr::null_mut();
        assert_eq!(ind_session_create(eng, &mut sid), IndStatus::Ok);
        let sid = c(&take(sid));
        let mut out = ptr::null_mut();
        let q = c("Tighten the wrist flange bolts to 45 Nm in a star pattern.");
        assert_eq!(ind_query(eng, sid.as_ptr(), q.as_ptr(), &mut out), IndStatus::Ok);
        let answer: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(answer["citations"].as_array().unwrap().len(), 1);
        assert_eq!(answer["citations"][0]["chunk_id"], "c0000");
        assert_eq!(answer["citations"][0]["title"], "Arm Manual");

        assert_eq!(ind_query(eng, sid.as_ptr(), c("  ").as_ptr(), &mut out), IndStatus::EmptyQuery);
        let mut sess = ptr::null_mut();
        assert_eq!(ind_session_get(eng, sid.as_ptr(), &mut sess), IndStatus::Ok);
        let session: Value = serde_json::from_str(&take(sess)).unwrap();
        assert_eq!(session["turns"].as_array().unwrap().len(), 2);

        assert_eq!(ind_session_delete(eng, sid.as_ptr()), IndStatus::Ok);
        assert_eq!(ind_session_delete(eng, sid.as_ptr()), IndStatus::Ok);
        assert_eq!(ind_session_get(eng, sid.as_ptr(), &mut sess), IndStatus::NotFound);
        assert!(last_error().contains(sid.to_str().unwrap()));
        assert_eq!(ind_query(eng, sid.as_ptr(), q.as_ptr(), &mut out), IndStatus::NotFound);

        let doc = c(report["doc_id"].as_str().unwrap());
        let mut removed = 0usize;
        assert_eq!(ind_remove_document(eng, doc.as_ptr(), &mut removed), IndStatus::Ok);
        assert_eq!(removed, 2);
        ind_engine_free(eng);
    }
}

#[test]
fn bad_arguments_map_to_status_codes() {
    unsafe {
        let mut eng = ptr::null_mut();
        assert_eq!(ind_engine_open(c("{not json").as_ptr(), &mut eng), IndStatus::InvalidJson);
        assert!(eng.is_null());
        assert!(last_error().starts_with("config"));
        assert_eq!(ind_engine_open(c(r#"{"k":0}"#).as_ptr(), &mut eng), IndStatus::Config);
        assert_eq!(ind_engine_open(ptr::null(), ptr::null_mut()), IndStatus::NullArgument);

        let eng = open(None);
        assert!(ind_last_error().is_null());
        let meta = c(r#"{"title":"T"}"#);
        assert_eq!(ind_ingest(eng, ptr::null(), ptr::null(), meta.as_ptr(), ptr::null_mut()), IndStatus::NullArgument);
        assert_eq!(ind_ingest(eng, c("x").as_ptr(), c("pdfx").as_ptr(), meta.as_ptr(), ptr::null_mut()), IndStatus::Ingest);
        assert_eq!(ind_ingest(eng, c("x").as_ptr(), ptr::null(), c("[]").as_ptr(), ptr::null_mut()), IndStatus::InvalidJson);
        assert_eq!(ind_ingest(eng, c(" ").as_ptr(), ptr::null(), meta.as_ptr(), ptr::null_mut()), IndStatus::Ingest);
        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            ind_ingest(eng, bad_utf8.as_ptr().cast(), ptr::null(), meta.as_ptr(), ptr::null_mut()),
            IndStatus::InvalidUtf8
        );
        assert_eq!(ind_index_count(ptr::null(), &mut 0), IndStatus::NullArgument);
        assert_eq!(ind_index_count(eng, ptr::null_mut()), IndStatus::NullArgument);
        ind_engine_free(eng);
        ind_engine_free(ptr::null_mut());
        ind_string_free(ptr::null_mut());
        assert_eq!(CStr::from_ptr(ind_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn open_from_config_file_persists() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("svc.toml");
    std::fs::write(&cfg, "data_dir = \"data\"\n").unwrap();
    let path = c(cfg.to_str().unwrap());
    unsafe {
        let mut eng = ptr::null_mut();
        assert_eq!(ind_engine_open_file(path.as_ptr(), &mut eng), IndStatus::Ok);
        let st = ind_ingest(eng, c(MANUAL).as_ptr(), c("markdown").as_ptr(), c(r#"{"title":"Arm"}"#).as_ptr(), ptr::null_mut());
        assert_eq!(st, IndStatus::Ok);
        ind_engine_free(eng);
        let mut again = ptr::null_mut();
        assert_eq!(ind_engine_open_file(path.as_ptr(), &mut again), IndStatus::Ok);
        let mut n = 0usize;
        ind_index_count(again, &mut n);
        assert_eq!(n, 2);
        ind_engine_free(again);
        let missing = c(dir.path().join("none.toml").to_str().unwrap());
        assert_eq!(ind_engine_open_file(missing.as_ptr(), &mut again), IndStatus::Config);
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_the_exported_api() {
    let h = std::fs::read_to_string(crate_dir().join("include/indurag.h")).unwrap();
    for name in [
        "typedef struct IndEngine IndEngine",
        "IND_STATUS_OK = 0",
        "IND_STATUS_PANIC = 10",
        "ind_engine_open(const char *config_json, struct IndEngine **out)",
        "ind_query(",
        "ind_last_error(void)",
        "ind_string_free(char *s)",
    ] {
        assert!(h.contains(name), "{name}");
    }
}

/// Directory holding `libindurag_ffi.a`, next to the test binary's `deps`.
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r##"
#include <stdio.h>
#include <string.h>
#include "indurag.h"

int main(void) {
    IndEngine *eng = NULL;
    if (ind_engine_open("{\"routing\":\"lexical\"}", &eng) != IND_STATUS_OK) return 10;
    if (ind_engine_open("{", &eng) != IND_STATUS_INVALID_JSON) return 11;
    if (ind_last_error() == NULL) return 12;
    const char *doc = "# Valves\n\nClose valve V3 before draining the tank.\n";
    if (ind_ingest(eng, doc, "markdown", "{\"title\":\"Tank\"}", NULL) != IND_STATUS_OK) return 13;
    char *sid = NULL;
    if (ind_session_create(eng, &sid) != IND_STATUS_OK) return 14;
    char *out = NULL;
    if (ind_query(eng, sid, "Close valve V3 before draining the tank.", &out) != IND_STATUS_OK) return 15;
    if (strstr(out, "\"chunk_id\":\"c0000\"") == NULL) return 16;
    printf("%s\n", out);
    ind_string_free(out);
    ind_string_free(sid);
    ind_engine_free(eng);
    return 0;
}
"##,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let lib = lib_dir().join("libindurag_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Tank"));
}
