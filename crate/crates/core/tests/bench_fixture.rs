//! Checks on the shipped benchmark corpus, made before any sweep runs.

use std::path::{Path, PathBuf};

use indurag::chunker::{chunk_document, ChunkerConfig};
use indurag::corpus::load_corpus;
use indurag::engine::EngineConfig;
use indurag::eval::{load_qa, run_bench, BenchSpec, Generator, RuleOracle, SweepAxis, Variant};
use indurag::ingest::Document;

fn bench_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bench")
}

fn corpus() -> Vec<Document> {
    load_corpus(&bench_dir().join("corpus")).unwrap()
}

/// Chunk texts are verbatim slices of the body, so a plain substring test
/// suffices and needs no sentence splitting.
fn holders(doc: &Document, cfg: &ChunkerConfig, claim: &str) -> usize {
    chunk_document(doc, cfg)
        .unwrap()
        .iter()
        .filter(|c| c.text.contains(claim))
        .count()
}

#[test]
fn every_claim_sits_in_one_section_and_fixed_1024_splits_enough() {
    let docs = corpus();
    let qa = load_qa(&bench_dir().join("qa.json")).unwrap();
    assert_eq!(qa.len(), 12);
    let mut split = 0;
    for item in &qa {
        let id = item.source_doc_id.as_deref().unwrap();
        let doc = docs.iter().find(|d| d.doc_id.as_str() == id).unwrap();
        let gt = item.ground_truth.as_str();
        assert!(doc.body.contains(gt), "{gt}");
        assert_eq!(holders(doc, &ChunkerConfig::semantic(2048), gt), 1, "{gt}");
        if holders(doc, &ChunkerConfig::fixed(1024), gt) == 0 {
            split += 1;
        }
    }
    assert!(split * 10 >= qa.len() * 3, "only {split} of {} claims split", qa.len());
    assert_eq!(split, 6);
}

#[test]
fn chunking_sweep_favours_semantic() {
    let docs = corpus();
    let qa = load_qa(&bench_dir().join("qa.json")).unwrap();
    let spec = BenchSpec {
        axis: SweepAxis::Chunking,
        variants: ["semantic", "fixed-1024", "fixed-2028"]
            .iter()
            .map(|s| Variant::parse_chunking(s, 2048).unwrap())
            .collect(),
        base: EngineConfig::default(),
    };
    let report = run_bench(&docs, &qa, &spec, &Generator::Extractive, &RuleOracle).unwrap();
    let sem = report.row("Semantic Context").unwrap().scores.unwrap();
    for label in ["Fixed length=1024", "Fixed length=2028"] {
        let f = report.row(label).unwrap().scores.unwrap();
        assert!(sem.cr >= f.cr && sem.faith >= f.faith, "{label}: {f:?} vs {sem:?}");
    }
    assert_eq!(sem.cr, 100.0);
    assert_eq!(report.row("Fixed length=1024").unwrap().scores.unwrap().cr, 50.0);
}
