use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

type Key = (String, [u8; 32]);

/// Embedding cache keyed by `(provider_id, sha256(text))`.
///
/// Persisted as JSON lines; `save` writes a temp file and renames it over
/// the previous one.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: Mutex<HashMap<Key, Vec<f32>>>,
    path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    provider_id: String,
    sha256: String,
    values: Vec<f32>,
}

fn key(provider_id: &str, text: &str) -> Key {
    let digest = Sha256::digest(text.as_bytes());
    let mut k = [0u8; 32];
    k.copy_from_slice(&digest);
    (provider_id.to_string(), k)
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache::default()
    }

    /// Open (or start) a cache persisted at `path`. Corrupt lines are skipped.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let f = io::BufReader::new(fs::File::open(&path)?);
            for line in f.lines() {
                let line = line?;
                let Ok(rec) = serde_json::from_str::<Record>(&line) else {
                    continue;
                };
                let Ok(bytes) = hex::decode(&rec.sha256) else {
                    continue;
                };
                if bytes.len() != 32 {
                    continue;
                }
                let mut k = [0u8; 32];
                k.copy_from_slice(&bytes);
                entries.insert((rec.provider_id, k), rec.values);
            }
        }
        Ok(EmbeddingCache {
            entries: Mutex::new(entries),
            path: Some(path),
        })
    }

    pub fn get(&self, provider_id: &str, text: &str) -> Option<Vec<f32>> {
        self.entries.lock().get(&key(provider_id, text)).cloned()
    }

    pub fn insert(&self, provider_id: &str, text: &str, values: Vec<f32>) {
        self.entries.lock().insert(key(provider_id, text), values);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self) -> io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        save_to(path, &self.entries.lock())
    }
}

fn save_to(path: &Path, entries: &HashMap<Key, Vec<f32>>) -> io::Result<()> {
    let mut rows: Vec<_> = entries.iter().collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let tmp = path.with_extension("tmp");
    {
        let mut w = io::BufWriter::new(fs::File::create(&tmp)?);
        for ((pid, digest), values) in rows {
            let rec = Record {
                provider_id: pid.clone(),
                sha256: hex::encode(digest),
                values: values.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.cache");
        let c = EmbeddingCache::open(&path).unwrap();
        c.insert("p", "hello", vec![0.6, 0.8]);
        c.insert("q", "hello", vec![1.0, 0.0]);
        c.save().unwrap();
        let c2 = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c2.len(), 2);
        assert_eq!(c2.get("p", "hello"), Some(vec![0.6, 0.8]));
        assert_eq!(c2.get("p", "other"), None);
    }

    #[test]
    fn concurrent_inserts_do_not_lose_keys() {
        let c = std::sync::Arc::new(EmbeddingCache::in_memory());
        std::thread::scope(|s| {
            for t in 0..8 {
                let c = c.clone();
                s.spawn(move || {
                    for i in 0..100 {
                        c.insert("p", &format!("{t}-{i}"), vec![1.0]);
                    }
                });
            }
        });
        assert_eq!(c.len(), 800);
    }
}
