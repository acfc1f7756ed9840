//! Document parsing and whitespace normalization.
//!
//! Ingestion accepts plain text and markdown. Other formats (PDF, office
//! documents) must be converted to text before they reach this module.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("document is not valid UTF-8 (first invalid byte at offset {0})")]
    InvalidEncoding(usize),
    #[error("document body is empty after normalization")]
    EmptyDocument,
    #[error("document title must not be empty")]
    MissingTitle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Plain,
    #[default]
    Markdown,
}

impl SourceFormat {
    /// Guess the format from a file extension (`md`/`markdown` vs anything else).
    pub fn from_extension(ext: &str) -> Self {
        match ext.to_ascii_lowercase().as_str() {
            "md" | "markdown" => SourceFormat::Markdown,
            _ => SourceFormat::Plain,
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceFormat::Plain => f.write_str("plain"),
            SourceFormat::Markdown => f.write_str("markdown"),
        }
    }
}

impl std::str::FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" | "text" | "txt" => Ok(SourceFormat::Plain),
            "markdown" | "md" => Ok(SourceFormat::Markdown),
            other => Err(format!("unknown document format '{other}'")),
        }
    }
}

/// Sidecar metadata supplied with a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub title: String,
    #[serde(default = "unknown")]
    pub author: String,
    #[serde(default = "default_doc_type")]
    pub doc_type: String,
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default)]
    pub page_count: u32,
}

fn unknown() -> String {
    "unknown".to_string()
}

fn default_doc_type() -> String {
    "document".to_string()
}

fn default_version() -> String {
    "1".to_string()
}

impl DocumentMeta {
    pub fn titled(title: impl Into<String>) -> Self {
        DocumentMeta {
            title: title.into(),
            author: unknown(),
            doc_type: default_doc_type(),
            version: default_version(),
            page_count: 0,
        }
    }

    pub fn with_version(mut self, version: impl Into<String>) -> Self {
        self.version = version.into();
        self
    }
}

/// Opaque document identifier.
///
/// Derived from the title alone, so a new version of the same document keeps
/// its id and supersedes the previous one. The id only contains
/// `[a-z0-9-]` so it can be embedded in citation tags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub String);

impl DocId {
    pub fn for_title(title: &str) -> Self {
        let mut slug = String::new();
        let mut dash = false;
        for c in title.chars().flat_map(char::to_lowercase) {
            if c.is_ascii_alphanumeric() {
                slug.push(c);
                dash = false;
            } else if !dash && !slug.is_empty() {
                slug.push('-');
                dash = true;
            }
            if slug.len() >= 40 {
                break;
            }
        }
        while slug.ends_with('-') {
            slug.pop();
        }
        let digest = Sha256::digest(title.trim().as_bytes());
        let tag = hex::encode(&digest[..4]);
        if slug.is_empty() {
            DocId(format!("doc-{tag}"))
        } else {
            DocId(format!("{slug}-{tag}"))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        DocId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocId,
    pub title: String,
    pub author: String,
    pub doc_type: String,
    pub version: String,
    pub format: SourceFormat,
    pub body: String,
    pub page_count: u32,
}

/// Decode and normalize a raw document.
pub fn parse_document(
    raw: &[u8],
    format: SourceFormat,
    meta: &DocumentMeta,
) -> Result<Document, IngestError> {
    let text = std::str::from_utf8(raw).map_err(|e| IngestError::InvalidEncoding(e.valid_up_to()))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if meta.title.trim().is_empty() {
        return Err(IngestError::MissingTitle);
    }
    let body = normalize_whitespace(text);
    if body.trim().is_empty() {
        return Err(IngestError::EmptyDocument);
    }
    Ok(Document {
        doc_id: DocId::for_title(&meta.title),
        title: meta.title.trim().to_string(),
        author: meta.author.clone(),
        doc_type: meta.doc_type.clone(),
        version: meta.version.clone(),
        format,
        body,
        page_count: meta.page_count,
    })
}

/// CRLF to LF, strip trailing whitespace on every line, and collapse runs of
/// three or more blank lines down to two.
pub fn normalize_whitespace(text: &str) -> String {
    let text = text.replace("\r\n", "\n");
    let mut out = String::with_capacity(text.len());
    let mut blank_run = 0usize;
    let mut lines = text.split('\n').peekable();
    while let Some(line) = lines.next() {
        let last = lines.peek().is_none();
        let line = line.trim_end();
        if line.is_empty() && !last {
            blank_run += 1;
            if blank_run > 2 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line);
        if !last {
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(t: &str) -> DocumentMeta {
        DocumentMeta::titled(t)
    }

    #[test]
    fn crlf_is_normalized() {
        let doc = parse_document(b"# A\r\nx\r\n", SourceFormat::Markdown, &meta("M")).unwrap();
        assert_eq!(doc.body, "# A\nx\n");
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(
            parse_document(b"", SourceFormat::Plain, &meta("M")),
            Err(IngestError::EmptyDocument)
        );
        assert_eq!(
            parse_document(b" \n\t\n", SourceFormat::Plain, &meta("M")),
            Err(IngestError::EmptyDocument)
        );
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let err = parse_document(b"ok\xff\xfe", SourceFormat::Plain, &meta("M")).unwrap_err();
        assert_eq!(err, IngestError::InvalidEncoding(2));
    }

    #[test]
    fn empty_title_is_rejected() {
        assert_eq!(
            parse_document(b"x", SourceFormat::Plain, &meta("  ")),
            Err(IngestError::MissingTitle)
        );
    }

    #[test]
    fn page_count_passes_through() {
        let mut m = meta("Converted manual");
        m.page_count = 74;
        let doc = parse_document(b"text", SourceFormat::Plain, &m).unwrap();
        assert_eq!(doc.page_count, 74);
    }

    #[test]
    fn blank_line_runs_collapse_to_two() {
        assert_eq!(normalize_whitespace("a\n\n\n\n\nb"), "a\n\n\nb");
        assert_eq!(normalize_whitespace("a\n\n\nb"), "a\n\n\nb");
        assert_eq!(normalize_whitespace("a  \t\nb \n"), "a\nb\n");
        // whitespace-only lines count as blank
        assert_eq!(normalize_whitespace("a\n \n\t\n  \n\nb"), "a\n\n\nb");
    }

    #[test]
    fn normalization_is_idempotent() {
        let once = normalize_whitespace("x \r\n\r\n\r\n\r\n\r\ny\t\r\n");
        assert_eq!(normalize_whitespace(&once), once);
    }

    #[test]
    fn doc_ids_are_stable_and_tag_safe() {
        let a = DocId::for_title("Robot Assembly Manual");
        assert_eq!(a, DocId::for_title("Robot Assembly Manual"));
        assert!(a.as_str().starts_with("robot-assembly-manual-"));
        assert_ne!(a, DocId::for_title("Robot assembly manual!"));
        let odd = DocId::for_title("§§§");
        assert!(odd.as_str().starts_with("doc-"));
        assert!(odd
            .as_str()
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-'));
    }
}
