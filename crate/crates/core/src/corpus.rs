//! Reading documents from disk, with optional `<file>.meta.json` sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::{parse_document, Document, DocumentMeta, IngestError, SourceFormat};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad metadata: {reason}")]
    Meta { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
}

/// A document file ready for ingestion.
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub path: PathBuf,
    pub raw: Vec<u8>,
    pub format: SourceFormat,
    pub meta: DocumentMeta,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn inferred_title(raw: &[u8], path: &Path) -> String {
    let text = String::from_utf8_lossy(raw);
    text.lines()
        .find_map(|l| l.strip_prefix("# ").map(|t| t.trim().to_string()))
        .filter(|t| !t.is_empty())
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().replace(['_', '-'], " "))
                .unwrap_or_else(|| "untitled".into())
        })
}

/// Read one file. Metadata comes from `meta`, else the sidecar, else the
/// first `# ` heading (or file stem) as title.
pub fn read_source(path: &Path, meta: Option<DocumentMeta>) -> Result<SourceFile, CorpusError> {
    let raw = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })?;
    let format = SourceFormat::from_extension(path.extension().and_then(|e| e.to_str()).unwrap_or(""));
    let meta = match meta {
        Some(m) => m,
        None => {
            let side = sidecar(path);
            if side.exists() {
                let bytes = fs::read(&side).map_err(|source| CorpusError::Io {
                    path: side.clone(),
                    source,
                })?;
                serde_json::from_slice(&bytes).map_err(|e| CorpusError::Meta {
                    path: side,
                    reason: e.to_string(),
                })?
            } else {
                DocumentMeta::titled(inferred_title(&raw, path))
            }
        }
    };
    Ok(SourceFile {
        path: path.into(),
        raw,
        format,
        meta,
    })
}

/// Document files (`.md`, `.markdown`, `.txt`) directly inside `dir`, by name.
pub fn list_sources(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let io = |source| CorpusError::Io { path: dir.into(), source };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let p = entry.map_err(io)?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if p.is_file() && matches!(ext.as_str(), "md" | "markdown" | "txt") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Parse every document file in `dir`, in file name order.
pub fn load_corpus(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    list_sources(dir)?
        .into_iter()
        .map(|p| {
            let s = read_source(&p, None)?;
            parse_document(&s.raw, s.format, &s.meta).map_err(|source| CorpusError::Ingest { path: p, source })
        })
        .collect()
}
