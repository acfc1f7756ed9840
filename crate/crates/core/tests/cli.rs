use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use indurag::http::unused_port;

const VARS: &[&str] = &[
    "INDURAG_CONFIG",
    "INDURAG_DATA_DIR",
    "INDURAG_BIND",
    "INDURAG_KEYS_FILE",
    "INDURAG_BENCH_CORPUS",
    "INDURAG_MOCK_PORT",
];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_indurag"));
    for v in VARS {
        c.env_remove(v);
    }
    c
}

fn run(c: &mut Command) -> Output {
    c.output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("indurag.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn help_and_unknown_flags() {
    let out = run(cli().arg("--help"));
    assert_eq!(out.status.code(), Some(0));
    for sub in ["ingest", "serve", "bench", "chat", "mock-agents", "keygen"] {
        assert!(text(&out.stdout).contains(sub), "{sub}");
        assert_eq!(run(cli().args([sub, "--help"])).status.code(), Some(0), "{sub}");
    }
    assert_eq!(run(cli().args(["ingest", "--bogus"])).status.code(), Some(2));
    assert_eq!(run(cli().arg("nonsense")).status.code(), Some(2));
}

#[test]
fn ingest_single_file_and_bad_paths() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run(cli()
        .args(["ingest", "--input"])
        .arg(fixtures().join("robot_arm_manual.md"))
        .arg("--data-dir")
        .arg(&data));
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.contains("doc_id=robot-arm-service-manual-07bc97ad"));
    assert!(stdout.contains("chunks=3"));

    let missing = dir.path().join("nowhere.md");
    let out = run(cli().args(["ingest", "--input"]).arg(&missing).arg("--data-dir").arg(&data));
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("nowhere.md"));

    // no data dir anywhere is a configuration error
    let out = run(cli().args(["ingest", "--input"]).arg(fixtures().join("robot_arm_manual.md")));
    assert_eq!(out.status.code(), Some(2));
    let bad = write_config(dir.path(), "no_such_key = 1\n");
    let out = run(cli().arg("--config").arg(&bad).args(["ingest", "--input", "x"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn directory_with_one_malformed_document() {
    let dir = tempfile::tempdir().unwrap();
    let docs = dir.path().join("docs");
    std::fs::create_dir(&docs).unwrap();
    std::fs::write(docs.join("a.md"), "# Alpha\n\nPump alpha text.\n").unwrap();
    std::fs::write(docs.join("b.md"), [0xff, 0xfe, 0x00, 0xc3]).unwrap();
    std::fs::write(docs.join("c.txt"), "Gamma valve notes.\n").unwrap();
    let out = run(cli()
        .args(["ingest", "--input"])
        .arg(&docs)
        .arg("--data-dir")
        .arg(dir.path().join("data")));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(text(&out.stdout).lines().count(), 2);
    let err = text(&out.stderr);
    assert_eq!(err.lines().filter(|l| l.starts_with("error:")).count(), 1);
    assert!(err.contains("b.md"));
}

#[test]
fn data_dir_precedence_is_flag_env_file() {
    let dir = tempfile::tempdir().unwrap();
    let (from_file, from_env, from_flag) = (dir.path().join("f"), dir.path().join("e"), dir.path().join("x"));
    let cfg = write_config(dir.path(), &format!("data_dir = {:?}\n", from_file.to_str().unwrap()));
    let manual = fixtures().join("robot_arm_manual.md");
    let ingest = |env: Option<&Path>, flag: Option<&Path>| {
        let mut c = cli();
        c.arg("--config").arg(&cfg).args(["ingest", "--input"]).arg(&manual);
        if let Some(e) = env {
            c.env("INDURAG_DATA_DIR", e);
        }
        if let Some(f) = flag {
            c.arg("--data-dir").arg(f);
        }
        assert_eq!(run(&mut c).status.code(), Some(0));
    };
    ingest(None, None);
    assert!(from_file.exists());
    ingest(Some(&from_env), None);
    assert!(from_env.exists());
    ingest(Some(&from_env), Some(&from_flag));
    assert!(from_flag.exists());
    // the config itself may come from the environment
    let out = run(cli().env("INDURAG_CONFIG", &cfg).args(["keygen", "--label", "envcfg"]));
    assert_eq!(out.status.code(), Some(0));
    assert!(from_file.join("keys.json").exists());
}

#[test]
fn keygen_twice_gives_two_records() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys.json");
    let gen = |c: &mut Command| {
        let out = run(c);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        text(&out.stdout).trim().to_string()
    };
    let a = gen(cli().args(["keygen", "--label", "ops", "--keys-file"]).arg(&keys));
    let b = gen(cli().args(["keygen", "--label", "ui"]).env("INDURAG_KEYS_FILE", &keys));
    assert_ne!(a, b);
    assert!(a.starts_with("ik_") && a.len() == 67);
    let stored = std::fs::read_to_string(&keys).unwrap();
    assert!(!stored.contains(&a) && !stored.contains(&b));
    let recs: Vec<serde_json::Value> = serde_json::from_str(&stored).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[1]["label"], "ui");

    // flag beats env
    let other = dir.path().join("other.json");
    gen(cli()
        .args(["keygen", "--label", "x", "--keys-file"])
        .arg(&other)
        .env("INDURAG_KEYS_FILE", &keys));
    assert!(other.exists());
    assert_eq!(run(cli().args(["keygen", "--label", "x"])).status.code(), Some(2));
}

#[test]
fn bench_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let bench = fixtures().join("bench");
    let cfg = write_config(
        dir.path(),
        &format!("[bench]\ncorpus_dir = {:?}\n", bench.join("corpus").to_str().unwrap()),
    );
    let go = |out: &Path| {
        let o = run(cli()
            .arg("--config")
            .arg(&cfg)
            .args(["bench", "--sweep", "chunking", "--qa"])
            .arg(bench.join("qa.json"))
            .arg("--out")
            .arg(out));
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
        text(&o.stdout)
    };
    let table = go(&dir.path().join("r1"));
    go(&dir.path().join("r2"));
    let j1 = std::fs::read(dir.path().join("r1/report.json")).unwrap();
    assert_eq!(j1, std::fs::read(dir.path().join("r2/report.json")).unwrap());
    assert!(table.contains("| Chunking") && table.contains("CR") && table.contains("Rank"));
    for label in ["Semantic Context", "Fixed length=1024", "Fixed length=2028"] {
        assert!(table.contains(label));
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("r1/report.md")).unwrap(), table);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let o = run(cli()
        .arg("--config")
        .arg(&cfg)
        .args(["bench", "--sweep", "chunking", "--qa"])
        .arg(&empty)
        .arg("--out")
        .arg(dir.path().join("r3")));
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("no QA items"));
}

#[test]
fn bench_failed_variant_exits_one_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let bench = fixtures().join("bench");
    let o = run(cli()
        .args(["bench", "--sweep", "vector_store", "--variants", "exact,remote=http://127.0.0.1:9", "--qa"])
        .arg(bench.join("qa.json"))
        .arg("--corpus")
        .arg(bench.join("corpus"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(1), "{}", text(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn chat_prints_sources_footer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "data_dir = \"data\"\nrouting = \"lexical\"\n");
    let out = run(cli()
        .arg("--config")
        .arg(&cfg)
        .args(["ingest", "--input"])
        .arg(fixtures().join("robot_arm_manual.md")));
    assert_eq!(out.status.code(), Some(0));
    let mut child = cli()
        .arg("--config")
        .arg(&cfg)
        .arg("chat")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"what torque for the wrist flange bolts of the arm?\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let footer = stdout.split("Sources:").nth(1).expect("footer");
    assert!(footer.contains("robot-arm-service-manual-07bc97ad"));
    assert!(footer.contains("Robot Arm Service Manual"));

    let out = run(cli().arg("--config").arg(&cfg).args(["chat", "--session", "nope"]));
    assert_eq!(out.status.code(), Some(1));
}

struct Kill(std::process::Child);

impl Drop for Kill {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn mock_agents_serve_fixtures_verbatim() {
    let port = unused_port();
    let _child = Kill(
        cli()
            .args(["mock-agents", "--fixtures"])
            .arg(fixtures().join("agents"))
            .env("INDURAG_MOCK_PORT", port.to_string())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let url = format!("http://127.0.0.1:{port}/pdm/a1");
    let deadline = Instant::now() + Duration::from_secs(10);
    let body = loop {
        match ureq::get(&url).call() {
            Ok(r) => break r.into_string().unwrap(),
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => panic!("{e}"),
        }
    };
    assert_eq!(body, std::fs::read_to_string(fixtures().join("agents/pdm/a1.json")).unwrap());
    let missing = ureq::get(&format!("http://127.0.0.1:{port}/pdm/zz")).call();
    assert!(matches!(missing, Err(ureq::Error::Status(404, _))));
}
