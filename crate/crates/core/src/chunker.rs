//! Heading-aware and fixed-length document chunking.
//!
//! Lengths are counted in Unicode scalar values (`char`s); spans are byte
//! offsets into `Document::body` so chunks can be sliced back out of the body.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DocId, Document, SourceFormat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChunkError {
    #[error("max_chars must be positive")]
    ZeroMaxChars,
    #[error("overlap_chars ({overlap}) must be smaller than max_chars ({max})")]
    OverlapTooLarge { overlap: usize, max: usize },
    #[error("section {heading_path:?} has {chars} chars, above max_chars {max}")]
    OversizeSection {
        heading_path: Vec<String>,
        chars: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkStrategy {
    Semantic,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OverflowPolicy {
    #[default]
    SplitFixed,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkerConfig {
    pub strategy: ChunkStrategy,
    pub max_chars: usize,
    #[serde(default)]
    pub overlap_chars: usize,
    #[serde(default)]
    pub semantic_overflow: OverflowPolicy,
}

impl ChunkerConfig {
    pub fn new(strategy: ChunkStrategy, max_chars: usize, overlap_chars: usize) -> Result<Self, ChunkError> {
        let cfg = ChunkerConfig {
            strategy,
            max_chars,
            overlap_chars,
            semantic_overflow: OverflowPolicy::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn semantic(max_chars: usize) -> Self {
        ChunkerConfig {
            strategy: ChunkStrategy::Semantic,
            max_chars,
            overlap_chars: 0,
            semantic_overflow: OverflowPolicy::SplitFixed,
        }
    }

    pub fn fixed(max_chars: usize) -> Self {
        ChunkerConfig {
            strategy: ChunkStrategy::Fixed,
            max_chars,
            overlap_chars: 0,
            semantic_overflow: OverflowPolicy::SplitFixed,
        }
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.max_chars == 0 {
            return Err(ChunkError::ZeroMaxChars);
        }
        if self.overlap_chars >= self.max_chars {
            return Err(ChunkError::OverlapTooLarge {
                overlap: self.overlap_chars,
                max: self.max_chars,
            });
        }
        Ok(())
    }

    /// Row label used in benchmark reports.
    pub fn label(&self) -> String {
        match self.strategy {
            ChunkStrategy::Semantic => "Semantic Context".to_string(),
            ChunkStrategy::Fixed => format!("Fixed length={}", self.max_chars),
        }
    }
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        ChunkerConfig::semantic(2048)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: DocId,
    pub ordinal: usize,
    pub text: String,
    pub heading_path: Vec<String>,
    /// Byte offsets `[start, end)` into the document body.
    pub char_span: (usize, usize),
}

pub fn chunk_id_for(ordinal: usize) -> String {
    format!("c{ordinal:04}")
}

/// Dispatch on `cfg.strategy`.
pub fn chunk_document(doc: &Document, cfg: &ChunkerConfig) -> Result<Vec<Chunk>, ChunkError> {
    match cfg.strategy {
        ChunkStrategy::Semantic => chunk_semantic(doc, cfg),
        ChunkStrategy::Fixed => chunk_fixed(doc, cfg),
    }
}

pub fn chunk_fixed(doc: &Document, cfg: &ChunkerConfig) -> Result<Vec<Chunk>, ChunkError> {
    cfg.validate()?;
    let spans = fixed_spans(&doc.body, cfg.max_chars, cfg.overlap_chars);
    Ok(build_chunks(
        doc,
        spans.into_iter().map(|(s, e)| (s, e, Vec::new())),
    ))
}

pub fn chunk_semantic(doc: &Document, cfg: &ChunkerConfig) -> Result<Vec<Chunk>, ChunkError> {
    cfg.validate()?;
    let body = doc.body.as_str();
    let headings = match doc.format {
        SourceFormat::Markdown => scan_headings(body),
        SourceFormat::Plain => Vec::new(),
    };

    // (start, heading_path) for every section, preamble first.
    let mut sections: Vec<(usize, Vec<String>)> = Vec::with_capacity(headings.len() + 1);
    let mut stack: Vec<(u8, String)> = Vec::new();
    for h in &headings {
        while stack.last().is_some_and(|(level, _)| *level >= h.level) {
            stack.pop();
        }
        stack.push((h.level, h.title.clone()));
        sections.push((h.start, stack.iter().map(|(_, t)| t.clone()).collect()));
    }
    match sections.first_mut() {
        None => sections.push((0, Vec::new())),
        Some(first) if first.0 > 0 => {
            if body[..first.0].trim().is_empty() {
                // whitespace-only preamble joins the first section
                first.0 = 0;
            } else {
                sections.insert(0, (0, Vec::new()));
            }
        }
        Some(_) => {}
    }

    let mut pieces = Vec::new();
    for (i, (start, path)) in sections.iter().enumerate() {
        let end = sections.get(i + 1).map_or(body.len(), |(s, _)| *s);
        let section = &body[*start..end];
        let chars = section.chars().count();
        if chars <= cfg.max_chars {
            pieces.push((*start, end, path.clone()));
            continue;
        }
        if cfg.semantic_overflow == OverflowPolicy::Error {
            return Err(ChunkError::OversizeSection {
                heading_path: path.clone(),
                chars,
                max: cfg.max_chars,
            });
        }
        for (s, e) in fixed_spans(section, cfg.max_chars, cfg.overlap_chars) {
            pieces.push((start + s, start + e, path.clone()));
        }
    }
    Ok(build_chunks(doc, pieces.into_iter()))
}

fn build_chunks(
    doc: &Document,
    spans: impl Iterator<Item = (usize, usize, Vec<String>)>,
) -> Vec<Chunk> {
    spans
        .enumerate()
        .map(|(ordinal, (start, end, heading_path))| Chunk {
            chunk_id: chunk_id_for(ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            text: doc.body[start..end].to_string(),
            heading_path,
            char_span: (start, end),
        })
        .collect()
}

/// Byte spans of fixed-length pieces of `text`.
///
/// Each piece ends after the last whitespace character that keeps it within
/// `max_chars`; a single word longer than `max_chars` is cut hard. With
/// `overlap > 0` the next piece starts `overlap` chars before the previous end.
pub fn fixed_spans(text: &str, max_chars: usize, overlap: usize) -> Vec<(usize, usize)> {
    assert!(max_chars > 0 && overlap < max_chars);
    if text.is_empty() {
        return Vec::new();
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let byte_at = |ci: usize| if ci == n { text.len() } else { chars[ci].0 };

    let mut spans = Vec::new();
    let mut start = 0usize;
    loop {
        if n - start <= max_chars {
            spans.push((byte_at(start), text.len()));
            break;
        }
        let limit = start + max_chars;
        let end = (start + 1..=limit)
            .rev()
            .find(|&p| chars[p - 1].1.is_whitespace())
            .unwrap_or(limit);
        spans.push((byte_at(start), byte_at(end)));
        start = if overlap > 0 && end - overlap > start {
            end - overlap
        } else {
            end
        };
    }
    spans
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heading {
    /// Byte offset of the heading's first line.
    pub start: usize,
    pub level: u8,
    pub title: String,
}

/// Find ATX (`#`..`######`) and setext (`===` / `---`) headings outside fenced
/// code blocks.
pub fn scan_headings(body: &str) -> Vec<Heading> {
    let mut headings: Vec<Heading> = Vec::new();
    let mut fence: Option<(char, usize)> = None;
    // previous line: (offset, text, may become a setext heading)
    let mut prev: Option<(usize, &str, bool)> = None;

    let mut offset = 0usize;
    for raw in body.split_inclusive('\n') {
        let line = raw.trim_end_matches('\n');
        let start = offset;
        offset += raw.len();

        let indent = line.len() - line.trim_start_matches(' ').len();
        let content = if indent <= 3 { &line[indent..] } else { "" };

        if let Some((fc, flen)) = fence {
            let run = content.chars().take_while(|&c| c == fc).count();
            if run >= flen && content[run * fc.len_utf8()..].trim().is_empty() {
                fence = None;
            }
            prev = None;
            continue;
        }
        if let Some((fc, flen)) = fence_open(content) {
            fence = Some((fc, flen));
            prev = None;
            continue;
        }
        if let Some((level, title)) = atx_heading(content) {
            headings.push(Heading { start, level, title });
            prev = None;
            continue;
        }
        if let Some(level) = setext_underline(content) {
            if let Some((pstart, ptext, true)) = prev {
                headings.push(Heading {
                    start: pstart,
                    level,
                    title: ptext.trim().to_string(),
                });
                prev = None;
                continue;
            }
        }
        let paragraph_line = indent <= 3 && !line.trim().is_empty();
        prev = Some((start, line, paragraph_line));
    }
    headings
}

fn fence_open(content: &str) -> Option<(char, usize)> {
    let first = content.chars().next()?;
    if first != '`' && first != '~' {
        return None;
    }
    let run = content.chars().take_while(|&c| c == first).count();
    if run < 3 {
        return None;
    }
    if first == '`' && content[run..].contains('`') {
        return None;
    }
    Some((first, run))
}

fn atx_heading(content: &str) -> Option<(u8, String)> {
    let hashes = content.bytes().take_while(|&b| b == b'#').count();
    if hashes == 0 || hashes > 6 {
        return None;
    }
    let rest = &content[hashes..];
    if !(rest.is_empty() || rest.starts_with(' ') || rest.starts_with('\t')) {
        return None;
    }
    let mut title = rest.trim();
    // optional closing sequence: " ##"
    let stripped = title.trim_end_matches('#');
    if stripped.len() < title.len() && (stripped.is_empty() || stripped.ends_with([' ', '\t'])) {
        title = stripped.trim_end();
    }
    Some((hashes as u8, title.to_string()))
}

fn setext_underline(content: &str) -> Option<u8> {
    let t = content.trim_end();
    let first = t.chars().next()?;
    if (first == '=' || first == '-') && t.len() >= 2 && t.chars().all(|c| c == first) {
        Some(if first == '=' { 1 } else { 2 })
    } else {
        None
    }
}
