//! Claim extraction and entailment. The rule-based oracle is a pure
//! function of its inputs; the LLM oracle asks a provider.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::llm::{LlmError, LlmProvider, TAG_RE};

/// Fragments shorter than this many tokens are not claims.
pub const MIN_CLAIM_TOKENS: usize = 3;

/// Abbreviations whose trailing period never ends a sentence.
const ABBREVIATIONS: &[&str] = &[
    "al.", "approx.", "ca.", "cf.", "dr.", "e.g.", "eg.", "fig.", "figs.", "i.e.", "ie.", "incl.", "max.", "min.",
    "mr.", "mrs.", "ms.", "no.", "nos.", "nr.", "ref.", "resp.", "sec.", "st.", "vol.", "vs.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimOrigin {
    GroundTruth,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    pub origin: ClaimOrigin,
}

/// Lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut space = true;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
            space = false;
        } else if !space {
            out.push(' ');
            space = true;
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

fn is_abbreviation(word: &str, next: &str) -> bool {
    let lower = word.to_lowercase();
    if lower == "etc." {
        // ends the sentence only when a capitalised word follows
        return !next.chars().next().is_some_and(char::is_uppercase);
    }
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    let letters = lower.trim_end_matches('.');
    // single initials ("J.") and dotted acronyms ("U.S.")
    !letters.is_empty() && letters.split('.').all(|p| p.chars().count() == 1 && p.chars().all(char::is_alphabetic))
}

/// Sentence segments: split after `.`, `!` or `?` followed by whitespace or
/// end of text, and at blank lines. Abbreviations, initials and leading list
/// numbers ("1.") do not end a sentence. Citation tags are removed first.
pub fn split_sentences(text: &str) -> Vec<String> {
    let text = TAG_RE.replace_all(text, "");
    let mut out = Vec::new();
    for para in split_paragraphs(&text) {
        let bytes = para.as_bytes();
        let mut start = 0;
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            if matches!(b, b'.' | b'!' | b'?') {
                let mut end = i + 1;
                while end < bytes.len() && matches!(bytes[end], b'.' | b'!' | b'?') {
                    end += 1;
                }
                let at_gap = end == bytes.len() || bytes[end].is_ascii_whitespace();
                if at_gap && !(b == b'.' && end == i + 1 && keeps_going(para, start, i)) {
                    out.push(para[start..end].trim().to_string());
                    start = end;
                }
                i = end;
            } else {
                i += 1;
            }
        }
        out.push(para[start..].trim().to_string());
    }
    out.retain(|s| !s.is_empty());
    out
}

fn split_paragraphs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut blank_run = false;
    let mut line_start = 0;
    for (i, ch) in text.char_indices() {
        if ch == '\n' {
            let line = &text[line_start..i];
            if line.trim().is_empty() && !blank_run {
                out.push(&text[start..line_start]);
                blank_run = true;
            }
            if !line.trim().is_empty() && blank_run {
                blank_run = false;
            }
            line_start = i + 1;
            if blank_run {
                start = line_start;
            }
        }
    }
    out.push(&text[start..]);
    out
}

/// The period at `dot` belongs to an abbreviation or a leading list number.
fn keeps_going(para: &str, seg_start: usize, dot: usize) -> bool {
    let before = &para[..=dot];
    let word_start = before
        .rfind(|c: char| c.is_whitespace())
        .map(|p| p + 1)
        .unwrap_or(0);
    let word = &before[word_start..];
    let next = para[dot + 1..].trim_start();
    if is_abbreviation(word, next) {
        return true;
    }
    let stem = &word[..word.len() - 1];
    let line_start = before[..word_start].rfind('\n').map(|p| p + 1).unwrap_or(0).max(seg_start);
    !stem.is_empty() && stem.chars().all(|c| c.is_ascii_digit()) && before[line_start..word_start].trim().is_empty()
}

/// Tokens of a raw segment: word runs plus punctuation runs, so
/// "Wear gloves." has three and "Ok." two.
pub fn raw_token_count(segment: &str) -> usize {
    #[derive(PartialEq, Clone, Copy)]
    enum K {
        Space,
        Word,
        Punct,
    }
    let mut n = 0;
    let mut prev = K::Space;
    for ch in segment.chars() {
        let k = if ch.is_alphanumeric() {
            K::Word
        } else if ch.is_whitespace() {
            K::Space
        } else {
            K::Punct
        };
        if k != K::Space && k != prev {
            n += 1;
        }
        prev = k;
    }
    n
}

/// Drop a leading bullet (`-`, `*`, `+`, `•`) or list number (`3.`, `3)`).
fn strip_list_marker(s: &str) -> &str {
    let t = s.trim_start();
    if let Some(rest) = t.strip_prefix(['-', '*', '+', '•']) {
        if rest.starts_with(char::is_whitespace) {
            return rest.trim_start();
        }
    }
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')']) {
            if r.starts_with(char::is_whitespace) {
                return r.trim_start();
            }
        }
    }
    t
}

fn to_claims(segments: impl IntoIterator<Item = String>, origin: ClaimOrigin) -> Vec<Claim> {
    segments
        .into_iter()
        .map(|s| strip_list_marker(&s).to_string())
        .filter(|s| raw_token_count(s) >= MIN_CLAIM_TOKENS)
        .map(|s| normalize(&s))
        .filter(|n| !n.is_empty())
        .map(|text| Claim { text, origin })
        .collect()
}

/// Token-boundary containment of the normalized claim in the normalized
/// context.
pub fn contains_claim(normalized_context: &str, claim: &str) -> bool {
    if claim.is_empty() {
        return false;
    }
    let hay = format!(" {normalized_context} ");
    hay.contains(&format!(" {claim} "))
}

pub trait ClaimOracle: Send + Sync {
    /// Recorded in report provenance.
    fn id(&self) -> String;

    fn extract(&self, text: &str, origin: ClaimOrigin) -> Result<Vec<Claim>, EvalError>;

    fn entails(&self, context: &[&str], claim: &Claim) -> Result<bool, EvalError>;
}

/// Sentence splitting plus normalized substring entailment. Paraphrases are
/// not recognised.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleOracle;

impl ClaimOracle for RuleOracle {
    fn id(&self) -> String {
        "rule-based".into()
    }

    fn extract(&self, text: &str, origin: ClaimOrigin) -> Result<Vec<Claim>, EvalError> {
        Ok(to_claims(split_sentences(text), origin))
    }

    fn entails(&self, context: &[&str], claim: &Claim) -> Result<bool, EvalError> {
        Ok(context.iter().any(|c| contains_claim(&normalize(c), &claim.text)))
    }
}

/// Provider-prompted decomposition and yes/no judgment.
pub struct LlmOracle {
    llm: Arc<dyn LlmProvider>,
    temperature: f64,
}

impl LlmOracle {
    pub fn new(llm: Arc<dyn LlmProvider>) -> Self {
        LlmOracle { llm, temperature: 0.0 }
    }

    fn ask(&self, prompt: &str) -> Result<String, EvalError> {
        self.llm.complete(prompt, self.temperature).map_err(|e| match e {
            LlmError::Unavailable { reason, .. } => EvalError::OracleUnavailable(reason),
            other => EvalError::OracleUnavailable(other.to_string()),
        })
    }
}

impl ClaimOracle for LlmOracle {
    fn id(&self) -> String {
        format!("llm:{}", self.llm.id())
    }

    fn extract(&self, text: &str, origin: ClaimOrigin) -> Result<Vec<Claim>, EvalError> {
        let reply = self.ask(&format!(
            "Decompose the text below into short, self-contained factual claims. \
             Write one claim per line and nothing else.\n\nText:\n{}\n",
            TAG_RE.replace_all(text, "")
        ))?;
        let lines = reply.lines().map(|l| {
            l.trim()
                .trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c.is_ascii_digit() || c == '.' || c == ')')
                .trim()
                .to_string()
        });
        Ok(to_claims(lines, origin))
    }

    fn entails(&self, context: &[&str], claim: &Claim) -> Result<bool, EvalError> {
        if context.is_empty() {
            return Ok(false);
        }
        let reply = self.ask(&format!(
            "Context:\n{}\n\nClaim: {}\n\nIs the claim fully supported by the context? Answer yes or no.",
            context.join("\n\n"),
            claim.text
        ))?;
        let first = reply.trim_start().split(|c: char| !c.is_alphabetic()).next().unwrap_or("");
        Ok(first.eq_ignore_ascii_case("yes"))
    }
}
