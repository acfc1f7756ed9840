//! Deterministic offline embedding: hashed token and character-trigram counts.

use super::{EmbedError, EmbeddingProvider, EmbeddingProviderSpec, EmbeddingVector};

pub const TEST_PROVIDER_ID: &str = "test:hash-ngram";
pub const TEST_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Raw bucket counts: every lowercased whitespace token and every character
/// trigram of that token increments `fnv1a_64(piece) % dim`.
pub(crate) fn ngram_counts(text: &str, dim: usize) -> Vec<f32> {
    let mut counts = vec![0.0f32; dim];
    let mut bump = |piece: &str| {
        counts[(fnv1a_64(piece.as_bytes()) % dim as u64) as usize] += 1.0;
    };
    let lower = text.to_lowercase();
    for token in lower.split_whitespace() {
        bump(token);
        let idx: Vec<usize> = token
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(token.len()))
            .collect();
        for w in idx.windows(4) {
            bump(&token[w[0]..w[3]]);
        }
    }
    counts
}

#[derive(Debug, Clone)]
pub struct HashNgramProvider {
    spec: EmbeddingProviderSpec,
}

impl HashNgramProvider {
    pub fn new(spec: EmbeddingProviderSpec) -> Self {
        HashNgramProvider { spec }
    }
}

impl Default for HashNgramProvider {
    fn default() -> Self {
        HashNgramProvider::new(EmbeddingProviderSpec::test_default())
    }
}

impl EmbeddingProvider for HashNgramProvider {
    fn spec(&self) -> &EmbeddingProviderSpec {
        &self.spec
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| ngram_counts(t, self.spec.dim)).collect())
    }
}

/// The offline provider at its default dimension (256).
pub fn test_embed(text: &str) -> Result<EmbeddingVector, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText { index: 0 });
    }
    EmbeddingVector::from_raw(ngram_counts(text, TEST_DIM), TEST_PROVIDER_ID)
}
