//! API keys. Only SHA-256 hashes are stored; the keys file is re-read
//! when its modification stamp changes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_HEADER: &str = "x-api-key";
const KEY_PREFIX: &str = "ik_";

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("key label must not be empty")]
    EmptyLabel,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiKeyRecord {
    pub label: String,
    /// Lowercase hex SHA-256 of the key.
    pub key_hash: String,
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
}

pub fn hash_key(key: &str) -> String {
    hex::encode(Sha256::digest(key.as_bytes()))
}

/// A fresh random key: prefix plus 32 random bytes in hex.
pub fn generate_key() -> String {
    let mut bytes = [0u8; 32];
    rand::fill(&mut bytes);
    format!("{KEY_PREFIX}{}", hex::encode(bytes))
}

fn eq_constant_time(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> KeyError {
    KeyError::File {
        path: path.into(),
        reason: e.to_string(),
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ApiKeyRecord>, KeyError> {
    match fs::read(path) {
        Ok(bytes) if bytes.iter().all(u8::is_ascii_whitespace) => Ok(Vec::new()),
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| file_err(path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(file_err(path, e)),
    }
}

/// Generate a key, append its record to `path` and return the raw key.
pub fn append_new_key(path: &Path, label: &str) -> Result<String, KeyError> {
    if label.trim().is_empty() {
        return Err(KeyError::EmptyLabel);
    }
    let mut records = read_records(path)?;
    let key = generate_key();
    records.push(ApiKeyRecord {
        label: label.trim().to_string(),
        key_hash: hash_key(&key),
        enabled: true,
        created_at: Some(Utc::now()),
    });
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| file_err(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let body = serde_json::to_vec_pretty(&records).map_err(|e| file_err(path, e))?;
    fs::write(&tmp, body).map_err(|e| file_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| file_err(path, e))?;
    Ok(key)
}

type Stamp = Option<(SystemTime, u64)>;

fn stamp(path: &Path) -> Stamp {
    let m = fs::metadata(path).ok()?;
    Some((m.modified().ok()?, m.len()))
}

#[derive(Debug)]
struct Loaded {
    stamp: Stamp,
    records: Vec<ApiKeyRecord>,
}

/// Enabled key hashes, from a file or a fixed list.
#[derive(Debug)]
pub struct KeyStore {
    path: Option<PathBuf>,
    loaded: Mutex<Loaded>,
}

impl KeyStore {
    /// A missing file means no keys: every protected request is refused.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, KeyError> {
        let path = path.into();
        let records = read_records(&path)?;
        Ok(KeyStore {
            loaded: Mutex::new(Loaded {
                stamp: stamp(&path),
                records,
            }),
            path: Some(path),
        })
    }

    pub fn fixed(records: Vec<ApiKeyRecord>) -> Self {
        KeyStore {
            path: None,
            loaded: Mutex::new(Loaded { stamp: None, records }),
        }
    }

    pub fn len(&self) -> usize {
        self.refresh();
        self.loaded.lock().records.iter().filter(|r| r.enabled).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn refresh(&self) {
        let Some(path) = &self.path else { return };
        let now = stamp(path);
        let mut loaded = self.loaded.lock();
        if now == loaded.stamp {
            return;
        }
        match read_records(path) {
            Ok(records) => {
                tracing::info!(keys = records.len(), "api keys reloaded");
                loaded.records = records;
                loaded.stamp = now;
            }
            // a half-written file keeps the previous keys until it parses
            Err(e) => tracing::error!(error = %e, "api keys file unreadable; keeping previous keys"),
        }
    }

    /// The label of the enabled record matching `key`.
    pub fn authenticate(&self, key: &str) -> Option<String> {
        if key.is_empty() {
            return None;
        }
        self.refresh();
        let h = hash_key(key);
        let loaded = self.loaded.lock();
        loaded
            .records
            .iter()
            .find(|r| r.enabled && eq_constant_time(r.key_hash.as_bytes(), h.as_bytes()))
            .map(|r| r.label.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keygen_appends_distinct_hashed_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("keys.json");
        let a = append_new_key(&p, "ops").unwrap();
        let b = append_new_key(&p, "ui").unwrap();
        assert_ne!(a, b);
        let recs = read_records(&p).unwrap();
        assert_eq!(recs.len(), 2);
        let raw = fs::read_to_string(&p).unwrap();
        assert!(!raw.contains(&a) && !raw.contains(&b));
        assert_eq!(recs[0].key_hash, hash_key(&a));
        assert!(append_new_key(&p, " ").is_err());
    }

    #[test]
    fn reloads_on_change_and_honours_enabled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("keys.json");
        let store = KeyStore::open(&p).unwrap();
        assert!(store.is_empty());
        let key = append_new_key(&p, "ops").unwrap();
        assert_eq!(store.authenticate(&key).as_deref(), Some("ops"));
        assert_eq!(store.authenticate("ik_wrong"), None);
        assert_eq!(store.authenticate(""), None);

        let mut recs = read_records(&p).unwrap();
        recs[0].enabled = false;
        recs.push(ApiKeyRecord {
            label: "padding".into(),
            key_hash: hash_key("other"),
            enabled: true,
            created_at: None,
        });
        fs::write(&p, serde_json::to_vec(&recs).unwrap()).unwrap();
        assert_eq!(store.authenticate(&key), None);
        assert_eq!(store.authenticate("other").as_deref(), Some("padding"));
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(hash_key("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
