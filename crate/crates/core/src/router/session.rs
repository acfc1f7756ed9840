//! Sessions persisted as append-only JSON lines, one file per session:
//! a header record followed by one record per turn.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::RouterError;
use crate::ingest::DocId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::User => "User",
            Role::Assistant => "Assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Citation {
    pub doc_id: DocId,
    pub chunk_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub citations: Vec<Citation>,
    #[serde(default)]
    pub tool_trace: Vec<String>,
    pub at: DateTime<Utc>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            text: text.into(),
            citations: Vec::new(),
            tool_trace: Vec::new(),
            at: Utc::now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub system_prompt: String,
    pub created_at: DateTime<Utc>,
    pub last_active: DateTime<Utc>,
    pub turns: Vec<Turn>,
}

impl Session {
    /// The last `window` turns.
    pub fn recent(&self, window: usize) -> &[Turn] {
        &self.turns[self.turns.len().saturating_sub(window)..]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Session {
        session_id: String,
        system_prompt: String,
        created_at: DateTime<Utc>,
    },
    Turn(Turn),
}

/// A live session plus a tombstone so in-flight work on a deleted session
/// cannot resurrect its file.
#[derive(Debug)]
pub struct SessionSlot {
    pub session: Session,
    deleted: bool,
}

impl SessionSlot {
    pub fn is_deleted(&self) -> bool {
        self.deleted
    }
}

pub type SessionHandle = Arc<Mutex<SessionSlot>>;

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Session cache over an optional on-disk directory. Each session has its own
/// lock, so work on distinct sessions runs in parallel.
#[derive(Debug)]
pub struct SessionStore {
    dir: Option<PathBuf>,
    live: Mutex<HashMap<String, SessionHandle>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            dir: None,
            live: Mutex::new(HashMap::new()),
        }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RouterError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| storage(&dir, e))?;
        Ok(SessionStore {
            dir: Some(dir),
            live: Mutex::new(HashMap::new()),
        })
    }

    fn path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    pub fn create(&self, system_prompt: &str) -> Result<Session, RouterError> {
        let now = Utc::now();
        let session = Session {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            system_prompt: system_prompt.to_string(),
            created_at: now,
            last_active: now,
            turns: Vec::new(),
        };
        if let Some(path) = self.path(&session.session_id) {
            let header = Record::Session {
                session_id: session.session_id.clone(),
                system_prompt: session.system_prompt.clone(),
                created_at: now,
            };
            append_records(&path, &[header])?;
        }
        self.live.lock().insert(
            session.session_id.clone(),
            Arc::new(Mutex::new(SessionSlot {
                session: session.clone(),
                deleted: false,
            })),
        );
        Ok(session)
    }

    /// The lock for `id`, loading the session from disk when needed.
    pub fn handle(&self, id: &str) -> Result<SessionHandle, RouterError> {
        if !valid_session_id(id) {
            return Err(RouterError::UnknownSession(id.to_string()));
        }
        let mut live = self.live.lock();
        if let Some(h) = live.get(id) {
            return Ok(h.clone());
        }
        let path = self.path(id).ok_or_else(|| RouterError::UnknownSession(id.to_string()))?;
        if !path.exists() {
            return Err(RouterError::UnknownSession(id.to_string()));
        }
        let session = load_session(&path)?;
        if session.session_id != id {
            return Err(RouterError::Storage(format!("{} holds session {}", path.display(), session.session_id)));
        }
        let h = Arc::new(Mutex::new(SessionSlot {
            session,
            deleted: false,
        }));
        live.insert(id.to_string(), h.clone());
        Ok(h)
    }

    pub fn get(&self, id: &str) -> Result<Session, RouterError> {
        let h = self.handle(id)?;
        let slot = h.lock();
        if slot.deleted {
            return Err(RouterError::UnknownSession(id.to_string()));
        }
        Ok(slot.session.clone())
    }

    /// Append turns under an already held session lock.
    pub fn append(&self, slot: &mut SessionSlot, turns: Vec<Turn>) -> Result<(), RouterError> {
        if slot.deleted {
            return Err(RouterError::UnknownSession(slot.session.session_id.clone()));
        }
        if let Some(path) = self.path(&slot.session.session_id) {
            let records: Vec<Record> = turns.iter().cloned().map(Record::Turn).collect();
            append_records(&path, &records)?;
        }
        if let Some(last) = turns.last() {
            slot.session.last_active = last.at;
        }
        slot.session.turns.extend(turns);
        Ok(())
    }

    /// Idempotent: deleting an unknown id succeeds.
    pub fn delete(&self, id: &str) -> Result<(), RouterError> {
        if !valid_session_id(id) {
            return Ok(());
        }
        let handle = self.live.lock().remove(id);
        // wait for in-flight work on this session
        let _guard = handle.as_ref().map(|h| {
            let mut g = h.lock();
            g.deleted = true;
            g
        });
        if let Some(path) = self.path(id) {
            match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(storage(&path, e)),
            }
        }
        Ok(())
    }

    /// Ids of persisted sessions (or live ones when in memory), sorted.
    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = match &self.dir {
            Some(dir) => fs::read_dir(dir)
                .into_iter()
                .flatten()
                .flatten()
                .filter_map(|e| {
                    let name = e.file_name().into_string().ok()?;
                    name.strip_suffix(".jsonl").map(str::to_string)
                })
                .collect(),
            None => self.live.lock().keys().cloned().collect(),
        };
        ids.sort();
        ids
    }
}

fn storage(path: &Path, e: impl std::fmt::Display) -> RouterError {
    RouterError::Storage(format!("{}: {e}", path.display()))
}

fn append_records(path: &Path, records: &[Record]) -> Result<(), RouterError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| storage(path, e))?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| storage(path, e))?;
    f.write_all(&buf).map_err(|e| storage(path, e))?;
    f.flush().map_err(|e| storage(path, e))
}

fn load_session(path: &Path) -> Result<Session, RouterError> {
    let f = fs::File::open(path).map_err(|e| storage(path, e))?;
    let mut session: Option<Session> = None;
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| storage(path, format!("line {}: {e}", n + 1)))?;
        match (rec, session.as_mut()) {
            (
                Record::Session {
                    session_id,
                    system_prompt,
                    created_at,
                },
                None,
            ) => {
                session = Some(Session {
                    session_id,
                    system_prompt,
                    created_at,
                    last_active: created_at,
                    turns: Vec::new(),
                })
            }
            (Record::Turn(t), Some(s)) => {
                s.last_active = t.at;
                s.turns.push(t);
            }
            _ => return Err(storage(path, format!("line {}: unexpected record", n + 1))),
        }
    }
    session.ok_or_else(|| storage(path, "empty session file"))
}
