//! Single-file index snapshots.
//!
//! Layout (little endian):
//!
//! ```text
//! "FRIDX1" | dim u32 | kind u8 | count u64 | next_item_id u64
//! count × ( record_len u32 | record )
//! record = item_id u64 | str doc_id | str chunk_id | str provider_id
//!          | dim × f32 | n_meta u32 | n_meta × (str key | str value)
//! str    = len u32 | utf-8 bytes
//! ```
//!
//! Writes go to a temp file in the same directory which is then renamed over
//! the target.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{
    BackendKind, ExactIndex, HnswIndex, HnswParams, IndexError, IndexedItem, VectorIndex,
};
use crate::embed::EmbeddingVector;
use crate::ingest::DocId;

fn snap(reason: impl Into<String>) -> IndexError {
    IndexError::Snapshot { reason: reason.into() }
}

pub const SNAPSHOT_MAGIC: &[u8; 6] = b"FRIDX1";

fn kind_byte(kind: BackendKind) -> u8 {
    match kind {
        BackendKind::Exact => 0,
        BackendKind::Hnsw => 1,
        BackendKind::Remote => 2,
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_snapshot(index: &dyn VectorIndex) -> Result<Vec<u8>, IndexError> {
    let (items, next_id) = index.export()?;
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.push(kind_byte(index.kind()));
    out.extend_from_slice(&(items.len() as u64).to_le_bytes());
    out.extend_from_slice(&next_id.to_le_bytes());
    let mut rec = Vec::new();
    for it in &items {
        rec.clear();
        rec.extend_from_slice(&it.item_id.to_le_bytes());
        put_str(&mut rec, it.doc_id.as_str());
        put_str(&mut rec, &it.chunk_id);
        put_str(&mut rec, it.vector.provider_id());
        for v in it.vector.values() {
            rec.extend_from_slice(&v.to_le_bytes());
        }
        rec.extend_from_slice(&(it.metadata.len() as u32).to_le_bytes());
        for (k, v) in &it.metadata {
            put_str(&mut rec, k);
            put_str(&mut rec, v);
        }
        out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    Ok(out)
}

pub fn write_snapshot(path: &Path, index: &dyn VectorIndex) -> Result<(), IndexError> {
    let bytes = encode_snapshot(index)?;
    let tmp = path.with_extension("fridx.tmp");
    let io = |e: std::io::Error| snap(format!("{}: {e}", path.display()));
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| snap("truncated snapshot"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, IndexError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, IndexError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| snap("invalid utf-8 string"))
    }
}

/// Decode a snapshot. The backend kind comes from the file; `params` is used
/// when it is an HNSW snapshot (the graph is rebuilt from the items).
pub fn decode_snapshot(bytes: &[u8], params: &HnswParams) -> Result<Box<dyn VectorIndex>, IndexError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(6)? != SNAPSHOT_MAGIC {
        return Err(snap("bad magic (expected FRIDX1)"));
    }
    let dim = r.u32()? as usize;
    let kind = r.u8()?;
    let count = r.u64()?;
    let next_id = r.u64()?;
    let mut items = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let mut rec = Reader { buf: r.take(len)?, pos: 0 };
        let item_id = rec.u64()?;
        let doc_id = DocId(rec.str()?);
        let chunk_id = rec.str()?;
        let provider = rec.str()?;
        let values = (0..dim).map(|_| rec.f32()).collect::<Result<Vec<_>, _>>()?;
        let n_meta = rec.u32()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..n_meta {
            let k = rec.str()?;
            let v = rec.str()?;
            metadata.insert(k, v);
        }
        if rec.pos != len {
            return Err(snap("record length mismatch"));
        }
        let vector = EmbeddingVector::from_unit(values, provider)
            .map_err(|e| snap(e.to_string()))?;
        items.push(IndexedItem {
            item_id,
            doc_id,
            chunk_id,
            vector,
            metadata,
        });
    }
    if r.pos != bytes.len() {
        return Err(snap("trailing bytes after records"));
    }
    match kind {
        0 => Ok(Box::new(ExactIndex::restore(dim, items, next_id)?)),
        1 => Ok(Box::new(HnswIndex::restore(dim, params.clone(), items, next_id)?)),
        other => Err(snap(format!("backend kind {other} cannot be restored locally"))),
    }
}

pub fn read_snapshot(path: &Path, params: &HnswParams) -> Result<Box<dyn VectorIndex>, IndexError> {
    let bytes = fs::read(path).map_err(|e| snap(format!("{}: {e}", path.display())))?;
    decode_snapshot(&bytes, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::test_support::items;
    use crate::index::MetadataFilter;

    #[test]
    fn exact_round_trip_is_byte_stable() {
        let mut idx = ExactIndex::new(8);
        idx.upsert(items(20, 8, 3, 4)).unwrap();
        idx.delete_document(&DocId("d3".into())).unwrap();
        let bytes = encode_snapshot(&idx).unwrap();
        assert_eq!(&bytes[..6], b"FRIDX1");
        let back = decode_snapshot(&bytes, &HnswParams::default()).unwrap();
        assert_eq!(back.kind(), BackendKind::Exact);
        assert_eq!(back.len(), 15);
        assert_eq!(encode_snapshot(back.as_ref()).unwrap(), bytes);
        // next id survives deletes of the newest items
        assert_eq!(back.export().unwrap().1, 20);
    }

    #[test]
    fn hnsw_round_trip_answers_the_same() {
        let batch = items(400, 8, 5, 2);
        let mut idx = HnswIndex::new(8, HnswParams::default());
        idx.upsert(batch.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.fridx");
        write_snapshot(&path, &idx).unwrap();
        let back = read_snapshot(&path, &HnswParams::default()).unwrap();
        assert_eq!(back.kind(), BackendKind::Hnsw);
        for q in batch.iter().step_by(37) {
            assert_eq!(
                idx.top_k(&q.vector, 5, &MetadataFilter::all()).unwrap(),
                back.top_k(&q.vector, 5, &MetadataFilter::all()).unwrap()
            );
        }
        assert!(!dir.path().join("index.fridx.tmp").exists());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let idx = ExactIndex::new(4);
        let mut bytes = encode_snapshot(&idx).unwrap();
        assert!(decode_snapshot(b"NOPE", &HnswParams::default()).is_err());
        bytes[0] = b'X';
        assert!(decode_snapshot(&bytes, &HnswParams::default()).is_err());
        let mut idx = ExactIndex::new(4);
        idx.upsert(items(2, 4, 1, 1)).unwrap();
        let bytes = encode_snapshot(&idx).unwrap();
        assert!(decode_snapshot(&bytes[..bytes.len() - 3], &HnswParams::default()).is_err());
    }
}
