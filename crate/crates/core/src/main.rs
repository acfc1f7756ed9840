use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use indurag::agents::{load_fixtures, mock_router};
use indurag::chunker::ChunkerConfig;
use indurag::config::ServiceConfig;
use indurag::corpus::{list_sources, load_corpus, read_source};
use indurag::engine::{AnswerOptions, Engine, EngineParts, IngestOptions};
use indurag::eval::{
    default_variants, load_qa, run_bench, BenchSpec, ClaimOracle, Generator, LlmOracle, RuleOracle, SweepAxis,
    Variant,
};
use indurag::llm::build_llm;
use indurag::service::{self, auth};

/// Retrieval-augmented chat over industrial documentation.
#[derive(Parser)]
#[command(name = "indurag", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// TOML or JSON configuration file.
    #[arg(long, global = true, env = "INDURAG_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides `data_dir` from the configuration file.
    #[arg(long, global = true, env = "INDURAG_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a file or every .md/.txt file in a directory.
    Ingest(IngestArgs),
    /// Run the HTTP API until SIGINT/SIGTERM.
    Serve(ServeArgs),
    /// Sweep one configuration axis and write report.json and report.md.
    Bench(BenchArgs),
    /// Line-oriented chat on stdin/stdout.
    Chat(ChatArgs),
    /// Serve agent fixture payloads from `<dir>/<agent>/<id>.json`.
    MockAgents(MockArgs),
    /// Print a new API key and append its hash to the keys file.
    Keygen(KeygenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Semantic,
    Fixed,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long)]
    max_chars: Option<usize>,
    #[arg(long)]
    overlap_chars: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "INDURAG_BIND")]
    bind: Option<String>,
    #[arg(long, env = "INDURAG_KEYS_FILE")]
    keys_file: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    sweep: SweepAxis,
    #[arg(long)]
    out: PathBuf,
    /// Corpus directory; defaults to `bench.corpus_dir`.
    #[arg(long, env = "INDURAG_BENCH_CORPUS")]
    corpus: Option<PathBuf>,
    /// Comma-separated variant names, e.g. `semantic,fixed-1024`.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// `extractive` or `llm`.
    #[arg(long)]
    generator: Option<String>,
    /// `rule` or `llm`.
    #[arg(long)]
    oracle: Option<String>,
}

#[derive(Args)]
struct ChatArgs {
    /// Resume an existing session.
    #[arg(long)]
    session: Option<String>,
}

#[derive(Args)]
struct MockArgs {
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long, env = "INDURAG_MOCK_PORT", default_value_t = 9100)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long)]
    label: String,
    #[arg(long, env = "INDURAG_KEYS_FILE")]
    keys_file: Option<PathBuf>,
}

/// Exit status plus the message for stderr.
struct Fail {
    code: u8,
    msg: String,
}

fn usage(msg: impl std::fmt::Display) -> Fail {
    Fail { code: 2, msg: msg.to_string() }
}

fn runtime(msg: impl std::fmt::Display) -> Fail {
    Fail { code: 1, msg: msg.to_string() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Fail> {
    // these two need no engine configuration
    match &cli.cmd {
        Command::MockAgents(a) => return mock_agents(a),
        Command::Keygen(a) if a.keys_file.is_some() => return keygen(a, None),
        _ => {}
    }
    let cfg = load_config(&cli.global)?;
    match cli.cmd {
        Command::Ingest(a) => ingest(cfg, &a),
        Command::Serve(a) => serve(cfg, a),
        Command::Bench(a) => bench(cfg, &a),
        Command::Chat(a) => chat(cfg, &a),
        Command::Keygen(a) => keygen(&a, Some(&cfg)),
        Command::MockAgents(_) => unreachable!(),
    }
}

fn load_config(g: &Global) -> Result<ServiceConfig, Fail> {
    let mut cfg = match &g.config {
        Some(p) => ServiceConfig::load(p).map_err(usage)?,
        None => ServiceConfig::default(),
    };
    if let Some(d) = &g.data_dir {
        cfg.engine.data_dir = Some(d.clone());
    }
    Ok(cfg)
}

fn open_engine(cfg: &ServiceConfig) -> Result<Engine, Fail> {
    cfg.validate().map_err(usage)?;
    Engine::open(cfg.engine.clone()).map_err(runtime)
}

fn ingest(cfg: ServiceConfig, a: &IngestArgs) -> Result<u8, Fail> {
    if cfg.engine.data_dir.is_none() {
        return Err(usage("ingest needs data_dir (config, --data-dir or INDURAG_DATA_DIR)"));
    }
    let chunker = if a.strategy.is_some() || a.max_chars.is_some() || a.overlap_chars.is_some() {
        let base = &cfg.engine.chunker;
        let max = a.max_chars.unwrap_or(base.max_chars);
        let mut c = match a.strategy {
            Some(Strategy::Fixed) => ChunkerConfig::fixed(max),
            Some(Strategy::Semantic) => ChunkerConfig::semantic(max),
            None => ChunkerConfig { max_chars: max, ..base.clone() },
        };
        c.overlap_chars = a.overlap_chars.unwrap_or(0);
        c.validate().map_err(usage)?;
        Some(c)
    } else {
        None
    };
    let opts = IngestOptions {
        chunker,
        ..IngestOptions::default()
    };
    let engine = open_engine(&cfg)?;
    let paths = if a.input.is_dir() {
        list_sources(&a.input).map_err(runtime)?
    } else {
        vec![a.input.clone()]
    };
    let mut failed = 0usize;
    for path in &paths {
        let result = read_source(path, None)
            .map_err(|e| e.to_string())
            .and_then(|src| {
                engine
                    .ingest(&src.raw, src.format, &src.meta, &opts)
                    .map_err(|e| format!("{}: {e}", path.display()))
            });
        match result {
            Ok(r) => println!("{}\tdoc_id={}\tchunks={}\ttool_id={}", path.display(), r.doc_id, r.chunk_count, r.tool_id),
            Err(e) => {
                failed += 1;
                eprintln!("error: {e}");
            }
        }
    }
    if paths.is_empty() {
        eprintln!("error: {}: no .md or .txt files", a.input.display());
        return Ok(1);
    }
    Ok(u8::from(failed > 0))
}

fn serve(mut cfg: ServiceConfig, a: ServeArgs) -> Result<u8, Fail> {
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    if let Some(k) = a.keys_file {
        cfg.keys_file = Some(k);
    }
    cfg.validate().map_err(usage)?;
    service::run(&cfg, EngineParts::default()).map_err(runtime)?;
    Ok(0)
}

fn bench(cfg: ServiceConfig, a: &BenchArgs) -> Result<u8, Fail> {
    cfg.validate().map_err(usage)?;
    let corpus_dir = a
        .corpus
        .clone()
        .or_else(|| cfg.bench.corpus_dir.clone())
        .ok_or_else(|| usage("no corpus (--corpus, INDURAG_BENCH_CORPUS or bench.corpus_dir)"))?;
    let qa = load_qa(&a.qa).map_err(usage)?;
    if qa.is_empty() {
        return Err(usage("no QA items"));
    }
    let corpus = load_corpus(&corpus_dir).map_err(runtime)?;
    let configured = match a.sweep {
        SweepAxis::Chunking => &cfg.bench.chunking,
        SweepAxis::Embedding => &cfg.bench.embedding,
        SweepAxis::VectorStore => &cfg.bench.vector_store,
    };
    let names: Vec<String> = if !a.variants.is_empty() {
        a.variants.clone()
    } else if !configured.is_empty() {
        configured.clone()
    } else {
        default_variants(a.sweep).iter().map(|s| s.to_string()).collect()
    };
    let variants = names
        .iter()
        .map(|n| Variant::parse(a.sweep, n, &cfg.engine))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let generator = match a.generator.as_ref().or(cfg.bench.generator.as_ref()).map(String::as_str) {
        None | Some("extractive") => Generator::Extractive,
        Some("llm") => Generator::Llm(build_llm(&cfg.engine.llm).map_err(usage)?),
        Some(o) => return Err(usage(format!("unknown generator '{o}' (extractive, llm)"))),
    };
    let oracle: Box<dyn ClaimOracle> = match a.oracle.as_ref().or(cfg.bench.oracle.as_ref()).map(String::as_str) {
        None | Some("rule") => Box::new(RuleOracle),
        Some("llm") => Box::new(LlmOracle::new(build_llm(&cfg.engine.llm).map_err(usage)?)),
        Some(o) => return Err(usage(format!("unknown oracle '{o}' (rule, llm)"))),
    };
    let spec = BenchSpec {
        axis: a.sweep,
        variants,
        base: cfg.engine.clone(),
    };
    let report = run_bench(&corpus, &qa, &spec, &generator, oracle.as_ref()).map_err(runtime)?;
    std::fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let write = |name: &str, body: String| {
        let p = a.out.join(name);
        std::fs::write(&p, body).map_err(|e| runtime(format!("{}: {e}", p.display())))
    };
    write("report.json", report.to_json())?;
    let md = report.to_markdown();
    write("report.md", md.clone())?;
    print!("{md}");
    Ok(u8::from(report.any_failed()))
}

fn print_answer(engine: &Engine, text: &str, citations: &[indurag::router::Citation]) {
    println!("{text}");
    if citations.is_empty() {
        return;
    }
    println!("Sources:");
    for c in citations {
        let title = engine
            .document(&c.doc_id)
            .map(|d| d.document.title.clone())
            .unwrap_or_default();
        println!("  [{}:{}] {title}", c.doc_id, c.chunk_id);
    }
}

fn chat(cfg: ServiceConfig, a: &ChatArgs) -> Result<u8, Fail> {
    let engine = open_engine(&cfg)?;
    let session = match &a.session {
        Some(id) => engine.get_session(id).map_err(runtime)?,
        None => engine.create_session(None).map_err(runtime)?,
    };
    eprintln!("session {} (empty line or EOF to quit)", session.session_id);
    let stdin = std::io::stdin();
    let mut failures = 0;
    for line in stdin.lock().lines() {
        let line = line.map_err(runtime)?;
        let q = line.trim();
        if q.is_empty() || q == "/quit" {
            break;
        }
        match engine.answer(&session.session_id, q, &AnswerOptions::default()) {
            Ok(out) => {
                print_answer(&engine, &out.turn.text, &out.turn.citations);
                for (agent, why) in &out.agent_failures {
                    eprintln!("warning: agent {agent} unavailable: {why}");
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!("error: {e}");
            }
        }
        let _ = std::io::stdout().flush();
    }
    Ok(u8::from(failures > 0))
}

fn mock_agents(a: &MockArgs) -> Result<u8, Fail> {
    let state = load_fixtures(&a.fixtures).map_err(|e| runtime(format!("{}: {e}", a.fixtures.display())))?;
    let count = state.fixture_count();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        eprintln!("serving {count} fixtures on http://{}", listener.local_addr()?);
        axum::serve(listener, mock_router(Arc::new(state)))
            .with_graceful_shutdown(service::shutdown_signal())
            .await
    })
    .map_err(runtime)?;
    Ok(0)
}

fn keygen(a: &KeygenArgs, cfg: Option<&ServiceConfig>) -> Result<u8, Fail> {
    let path: PathBuf = match (&a.keys_file, cfg) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) => c
            .keys_path()
            .ok_or_else(|| usage("no keys file (--keys-file, INDURAG_KEYS_FILE, keys_file or data_dir)"))?,
        (None, None) => unreachable!(),
    };
    let key = auth::append_new_key(Path::new(&path), &a.label).map_err(runtime)?;
    println!("{key}");
    eprintln!("appended key '{}' to {}", a.label.trim(), path.display());
    Ok(0)
}
