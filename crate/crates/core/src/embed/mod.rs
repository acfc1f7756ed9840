//! Text embedding: unit-norm vectors from pluggable providers.

mod cache;
mod hash;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::EmbeddingCache;
pub use hash::{fnv1a_64, test_embed, HashNgramProvider, TEST_DIM, TEST_PROVIDER_ID};
pub use remote::RemoteProvider;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("text at position {index} is empty")]
    EmptyText { index: usize },
    #[error("embedding provider {provider} unavailable after {attempts} attempt(s): {reason}")]
    ProviderUnavailable {
        provider: String,
        attempts: u32,
        reason: String,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector has non-finite components")]
    NonFinite,
    #[error("vector has zero norm and cannot be normalized")]
    ZeroVector,
    #[error("provider returned a malformed response: {0}")]
    BadResponse(String),
    #[error("unknown embedding provider '{0}' (expected test:hash-ngram… or remote:…)")]
    UnknownProvider(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

/// A unit-L2-norm embedding tagged with the provider that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    provider_id: String,
}

impl EmbeddingVector {
    /// Normalize raw provider output.
    pub fn from_raw(values: Vec<f32>, provider_id: impl Into<String>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimensionMismatch { expected: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        let values = values.iter().map(|&v| (f64::from(v) / norm) as f32).collect();
        Ok(EmbeddingVector {
            values,
            provider_id: provider_id.into(),
        })
    }

    /// Accept values that are already unit norm (e.g. read back from a
    /// snapshot) without rescaling, so stored bits survive round trips.
    pub fn from_unit(values: Vec<f32>, provider_id: impl Into<String>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return EmbeddingVector::from_raw(values, provider_id);
        }
        Ok(EmbeddingVector {
            values,
            provider_id: provider_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Dot product accumulated in f64.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot(&a.values, &b.values).clamp(-1.0, 1.0))
}

fn default_batch_limit() -> usize {
    64
}

/// One entry of the provider config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProviderSpec {
    pub provider_id: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_batch_limit")]
    pub batch_limit: usize,
}

impl EmbeddingProviderSpec {
    pub fn test_default() -> Self {
        EmbeddingProviderSpec {
            provider_id: TEST_PROVIDER_ID.to_string(),
            dim: TEST_DIM,
            endpoint: None,
            auth_env_var: None,
            batch_limit: default_batch_limit(),
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Config(format!("{}: dim must be positive", self.provider_id)));
        }
        if self.batch_limit == 0 {
            return Err(EmbedError::Config(format!(
                "{}: batch_limit must be positive",
                self.provider_id
            )));
        }
        if self.provider_id.starts_with("remote:") && self.endpoint.is_none() {
            return Err(EmbedError::Config(format!(
                "{}: remote providers need an endpoint",
                self.provider_id
            )));
        }
        Ok(())
    }
}

impl Default for EmbeddingProviderSpec {
    fn default() -> Self {
        EmbeddingProviderSpec::test_default()
    }
}

/// Parse a provider config file: a JSON list of [`EmbeddingProviderSpec`].
pub fn parse_provider_specs(json: &str) -> Result<Vec<EmbeddingProviderSpec>, EmbedError> {
    let specs: Vec<EmbeddingProviderSpec> =
        serde_json::from_str(json).map_err(|e| EmbedError::Config(e.to_string()))?;
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

pub trait EmbeddingProvider: Send + Sync {
    fn spec(&self) -> &EmbeddingProviderSpec;

    /// Embed at most `batch_limit` texts. Output need not be normalized.
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError>;

    /// Cheap reachability check used by health reporting.
    fn probe(&self) -> bool {
        true
    }
}

pub fn build_provider(spec: &EmbeddingProviderSpec) -> Result<Arc<dyn EmbeddingProvider>, EmbedError> {
    spec.validate()?;
    if spec.provider_id.starts_with("test:hash-ngram") {
        Ok(Arc::new(HashNgramProvider::new(spec.clone())))
    } else if spec.provider_id.starts_with("remote:") {
        Ok(Arc::new(RemoteProvider::new(spec.clone())?))
    } else {
        Err(EmbedError::UnknownProvider(spec.provider_id.clone()))
    }
}

/// Provider plus optional cache; the entry point used by the rest of the crate.
#[derive(Clone)]
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Option<Arc<EmbeddingCache>>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("provider", &self.provider.spec().provider_id)
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Embedder { provider, cache: None }
    }

    pub fn from_spec(spec: &EmbeddingProviderSpec) -> Result<Self, EmbedError> {
        Ok(Embedder::new(build_provider(spec)?))
    }

    pub fn with_cache(mut self, cache: Arc<EmbeddingCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn spec(&self) -> &EmbeddingProviderSpec {
        self.provider.spec()
    }

    pub fn dim(&self) -> usize {
        self.provider.spec().dim
    }

    pub fn provider_id(&self) -> &str {
        &self.provider.spec().provider_id
    }

    pub fn probe(&self) -> bool {
        self.provider.probe()
    }

    pub fn cache(&self) -> Option<&Arc<EmbeddingCache>> {
        self.cache.as_ref()
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    /// Embed `texts` in order, re-batching to the provider's batch limit and
    /// serving repeats from the cache.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText { index });
        }
        let spec = self.provider.spec();
        let pid = spec.provider_id.as_str();

        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut missing = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            match self.cache.as_ref().and_then(|c| c.get(pid, text)) {
                Some(values) => out[i] = Some(EmbeddingVector::from_unit(values, pid)?),
                None => missing.push(i),
            }
        }

        for batch in missing.chunks(spec.batch_limit) {
            let batch_texts: Vec<&str> = batch.iter().map(|&i| texts[i]).collect();
            let raw = self.provider.embed_raw(&batch_texts)?;
            if raw.len() != batch.len() {
                return Err(EmbedError::BadResponse(format!(
                    "asked for {} vectors, got {}",
                    batch.len(),
                    raw.len()
                )));
            }
            for (&i, values) in batch.iter().zip(raw) {
                if values.len() != spec.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: spec.dim,
                        got: values.len(),
                    });
                }
                let v = EmbeddingVector::from_raw(values, pid)?;
                if let Some(cache) = &self.cache {
                    cache.insert(pid, texts[i], v.values().to_vec());
                }
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn test_embedder() -> Embedder {
        Embedder::from_spec(&EmbeddingProviderSpec::test_default()).unwrap()
    }

    #[test]
    fn identical_texts_identical_vectors() {
        let v = test_embedder().embed_batch(&["abc", "abc"]).unwrap();
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn empty_text_rejected() {
        assert_eq!(
            test_embedder().embed_batch(&["ok", ""]),
            Err(EmbedError::EmptyText { index: 1 })
        );
    }

    #[test]
    fn cosine_identities() {
        let e = test_embedder();
        let v = e.embed_one("pump seal torque").unwrap();
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        let neg = EmbeddingVector::from_raw(v.values().iter().map(|x| -x).collect(), "t").unwrap();
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-6);

        let mut e1 = vec![0.0f32; 4];
        e1[0] = 1.0;
        let mut e2 = vec![0.0f32; 4];
        e2[1] = 1.0;
        let e1 = EmbeddingVector::from_raw(e1, "t").unwrap();
        let e2 = EmbeddingVector::from_raw(e2, "t").unwrap();
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert!(matches!(
            cosine(&e1, &v),
            Err(EmbedError::DimensionMismatch { expected: 4, got: 256 })
        ));
    }

    #[test]
    fn from_raw_rejects_degenerate_vectors() {
        assert_eq!(EmbeddingVector::from_raw(vec![0.0; 3], "t"), Err(EmbedError::ZeroVector));
        assert_eq!(
            EmbeddingVector::from_raw(vec![1.0, f32::NAN], "t"),
            Err(EmbedError::NonFinite)
        );
    }

    struct Counting {
        spec: EmbeddingProviderSpec,
        calls: AtomicUsize,
        max_batch: AtomicUsize,
        dim_out: usize,
    }

    impl EmbeddingProvider for Counting {
        fn spec(&self) -> &EmbeddingProviderSpec {
            &self.spec
        }
        fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.max_batch.fetch_max(texts.len(), Ordering::SeqCst);
            Ok(texts
                .iter()
                .map(|t| {
                    let mut v = vec![0.5f32; self.dim_out];
                    v[0] = t.len() as f32;
                    v
                })
                .collect())
        }
    }

    fn counting(batch_limit: usize, dim_out: usize) -> Arc<Counting> {
        Arc::new(Counting {
            spec: EmbeddingProviderSpec {
                provider_id: "remote:counting".into(),
                dim: 8,
                endpoint: Some("http://unused".into()),
                auth_env_var: None,
                batch_limit,
            },
            calls: AtomicUsize::new(0),
            max_batch: AtomicUsize::new(0),
            dim_out,
        })
    }

    #[test]
    fn large_inputs_are_rebatched() {
        let p = counting(3, 8);
        let e = Embedder::new(p.clone());
        let texts: Vec<String> = (0..10).map(|i| "x".repeat(i + 1)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let out = e.embed_batch(&refs).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(p.calls.load(Ordering::SeqCst), 4);
        assert_eq!(p.max_batch.load(Ordering::SeqCst), 3);
        // order preserved: first component grows with text length
        for w in out.windows(2) {
            assert!(w[0].values()[0] < w[1].values()[0]);
        }
    }

    #[test]
    fn wrong_dimension_from_provider() {
        let e = Embedder::new(counting(4, 5));
        assert_eq!(
            e.embed_batch(&["a"]),
            Err(EmbedError::DimensionMismatch { expected: 8, got: 5 })
        );
    }

    #[test]
    fn cache_serves_repeats() {
        let p = counting(8, 8);
        let e = Embedder::new(p.clone()).with_cache(Arc::new(EmbeddingCache::in_memory()));
        let a = e.embed_batch(&["one", "two"]).unwrap();
        let b = e.embed_batch(&["two", "one", "three"]).unwrap();
        assert_eq!(p.calls.load(Ordering::SeqCst), 2);
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[0]);
    }

    #[test]
    fn provider_config_file_parses() {
        let specs = parse_provider_specs(
            r#"[{"provider_id":"test:hash-ngram","dim":256,"batch_limit":32},
                {"provider_id":"remote:mpnet","dim":768,"endpoint":"http://localhost:9/embed","auth_env_var":"EMB_KEY","batch_limit":16}]"#,
        )
        .unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[1].auth_env_var.as_deref(), Some("EMB_KEY"));
        assert!(parse_provider_specs(r#"[{"provider_id":"remote:x","dim":3}]"#).is_err());
        assert!(matches!(
            build_provider(&EmbeddingProviderSpec {
                provider_id: "mystery".into(),
                ..EmbeddingProviderSpec::test_default()
            }),
            Err(EmbedError::UnknownProvider(_))
        ));
    }
}
