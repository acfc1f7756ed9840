use super::{
    rank_order, BackendKind, Hit, IndexError, IndexedItem, MetadataFilter, NewItem, Registry,
    VectorIndex,
};
use crate::embed::{dot, EmbeddingVector};
use crate::ingest::DocId;

/// Brute-force cosine scan.
#[derive(Debug, Clone)]
pub struct ExactIndex {
    reg: Registry,
    items: Vec<IndexedItem>,
}

impl ExactIndex {
    pub fn new(dim: usize) -> Self {
        ExactIndex {
            reg: Registry::new(dim),
            items: Vec::new(),
        }
    }

    pub(crate) fn restore(dim: usize, items: Vec<IndexedItem>, next_id: u64) -> Result<Self, IndexError> {
        let mut idx = ExactIndex::new(dim);
        for it in &items {
            idx.reg.restore(it)?;
        }
        idx.reg.next_id = idx.reg.next_id.max(next_id);
        idx.items = items;
        idx.items.sort_by_key(|it| it.item_id);
        Ok(idx)
    }
}

impl VectorIndex for ExactIndex {
    fn kind(&self) -> BackendKind {
        BackendKind::Exact
    }

    fn dim(&self) -> usize {
        self.reg.dim
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn upsert(&mut self, items: Vec<NewItem>) -> Result<Vec<u64>, IndexError> {
        let admitted = self.reg.admit(items)?;
        let ids = admitted.iter().map(|it| it.item_id).collect();
        self.items.extend(admitted);
        Ok(ids)
    }

    fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: &MetadataFilter,
    ) -> Result<Vec<Hit>, IndexError> {
        self.reg.check_query(query, k)?;
        let q = query.values();
        let mut hits: Vec<Hit> = self
            .items
            .iter()
            .filter(|it| filter.matches(it))
            .map(|it| Hit::of(it, dot(q, it.vector.values())))
            .collect();
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(hits)
    }

    fn delete_document(&mut self, doc_id: &DocId) -> Result<usize, IndexError> {
        let before = self.items.len();
        let reg = &mut self.reg;
        self.items.retain(|it| {
            if &it.doc_id == doc_id {
                reg.forget(&it.doc_id, &it.chunk_id);
                false
            } else {
                true
            }
        });
        Ok(before - self.items.len())
    }

    fn contains_document(&self, doc_id: &DocId) -> Result<bool, IndexError> {
        Ok(self.items.iter().any(|it| &it.doc_id == doc_id))
    }

    fn export(&self) -> Result<(Vec<IndexedItem>, u64), IndexError> {
        Ok((self.items.clone(), self.reg.next_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::test_support::items;
    use proptest::prelude::*;

    #[test]
    fn ids_are_monotonic() {
        let mut idx = ExactIndex::new(8);
        assert_eq!(idx.upsert(items(3, 8, 1, 1)).unwrap(), vec![0, 1, 2]);
        let more: Vec<_> = items(5, 8, 2, 1)
            .into_iter()
            .map(|mut it| {
                it.doc_id = DocId("other".into());
                it
            })
            .collect();
        assert_eq!(idx.upsert(more).unwrap(), vec![3, 4, 5, 6, 7]);
    }

    #[test]
    fn upsert_errors() {
        let mut idx = ExactIndex::new(256);
        let wrong = items(1, 128, 1, 1);
        assert_eq!(
            idx.upsert(wrong),
            Err(IndexError::DimensionMismatch { expected: 256, got: 128 })
        );
        let one = items(1, 256, 1, 1);
        idx.upsert(one.clone()).unwrap();
        assert!(matches!(idx.upsert(one), Err(IndexError::DuplicateChunk { .. })));
        // failed batch leaves nothing behind
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn self_retrieval_scores_one() {
        let mut idx = ExactIndex::new(32);
        let batch = items(50, 32, 7, 5);
        let probe = batch[17].vector.clone();
        idx.upsert(batch).unwrap();
        let hits = idx.top_k(&probe, 3, &MetadataFilter::all()).unwrap();
        assert_eq!(hits[0].item_id, 17);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unmatched_filter_and_empty_index_give_nothing() {
        let mut idx = ExactIndex::new(16);
        let batch = items(10, 16, 3, 2);
        let q = batch[0].vector.clone();
        assert!(idx.top_k(&q, 5, &MetadataFilter::all()).unwrap().is_empty());
        idx.upsert(batch).unwrap();
        let f = MetadataFilter::doc(&DocId("D".into()));
        assert!(idx.top_k(&q, 5, &f).unwrap().is_empty());
        assert_eq!(idx.top_k(&q, 0, &f), Err(IndexError::InvalidK));
    }

    #[test]
    fn delete_document_counts() {
        let mut idx = ExactIndex::new(8);
        let mut batch = items(8, 8, 5, 1);
        for (i, it) in batch.iter_mut().enumerate() {
            it.doc_id = DocId(if i < 5 { "D" } else { "E" }.into());
        }
        let q = batch[0].vector.clone();
        idx.upsert(batch.clone()).unwrap();
        assert_eq!(idx.delete_document(&DocId("D".into())).unwrap(), 5);
        assert_eq!(idx.delete_document(&DocId("unknown".into())).unwrap(), 0);
        let (left, _) = idx.export().unwrap();
        assert_eq!(left.len(), 3);
        assert!(left.iter().all(|it| it.doc_id.as_str() == "E"));
        assert!(idx
            .top_k(&q, 10, &MetadataFilter::doc(&DocId("D".into())))
            .unwrap()
            .is_empty());
        // deleted chunks can be re-ingested and get fresh ids
        let ids = idx.upsert(batch[..5].to_vec()).unwrap();
        assert_eq!(ids, vec![8, 9, 10, 11, 12]);
    }

    #[test]
    fn ties_break_by_item_id() {
        let mut idx = ExactIndex::new(4);
        let v = EmbeddingVector::from_raw(vec![1.0, 0.0, 0.0, 0.0], "t").unwrap();
        let batch: Vec<NewItem> = (0..6)
            .map(|i| NewItem {
                doc_id: DocId("d".into()),
                chunk_id: format!("c{i}"),
                vector: v.clone(),
                metadata: Default::default(),
            })
            .collect();
        idx.upsert(batch).unwrap();
        let hits = idx.top_k(&v, 4, &MetadataFilter::all()).unwrap();
        let ids: Vec<u64> = hits.iter().map(|h| h.item_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    proptest! {
        #[test]
        fn filter_soundness_and_order(seed in 0u64..500, k in 1usize..20, doc in 0usize..4, kind in 0usize..4) {
            let mut idx = ExactIndex::new(12);
            let batch = items(60, 12, seed, 4);
            let q = batch[(seed % 60) as usize].vector.clone();
            idx.upsert(batch).unwrap();
            let mut f = MetadataFilter::doc(&DocId(format!("d{doc}")));
            if kind < 3 {
                f = f.and("kind", format!("k{kind}"));
            }
            let hits = idx.top_k(&q, k, &f).unwrap();
            prop_assert!(hits.len() <= k);
            let (all, _) = idx.export().unwrap();
            for h in &hits {
                let it = all.iter().find(|it| it.item_id == h.item_id).unwrap();
                prop_assert!(f.matches(it));
            }
            for w in hits.windows(2) {
                prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].item_id < w[1].item_id));
            }
        }
    }
}
