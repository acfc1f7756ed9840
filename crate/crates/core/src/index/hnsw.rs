//! Hierarchical navigable small-world graph over unit vectors.
//!
//! Similarity is the dot product. Deleted nodes stay in the graph as
//! tombstones so that navigation keeps working; they never appear in results.
//! Node levels are derived from a hash of the item id, so rebuilding from a
//! snapshot reproduces the same graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{
    rank_order, BackendKind, Hit, IndexError, IndexedItem, MetadataFilter, NewItem, Registry,
    VectorIndex,
};
use crate::embed::{dot, EmbeddingVector};
use crate::ingest::DocId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_ef_construction")]
    pub ef_construction: usize,
    #[serde(default = "default_ef_search")]
    pub ef_search: usize,
}

fn default_m() -> usize {
    16
}
fn default_ef_construction() -> usize {
    200
}
fn default_ef_search() -> usize {
    64
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: default_m(),
            ef_construction: default_ef_construction(),
            ef_search: default_ef_search(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    item: IndexedItem,
    /// neighbors[layer]
    links: Vec<Vec<u32>>,
    deleted: bool,
}

/// (similarity, node) ordered by similarity, ties by node index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored(f64, u32);

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    reg: Registry,
    params: HnswParams,
    nodes: Vec<Node>,
    entry: Option<u32>,
    top_layer: usize,
    live: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        let params = HnswParams {
            m: params.m.max(2),
            ef_construction: params.ef_construction.max(1),
            ef_search: params.ef_search.max(1),
        };
        HnswIndex {
            reg: Registry::new(dim),
            params,
            nodes: Vec::new(),
            entry: None,
            top_layer: 0,
            live: 0,
        }
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub(crate) fn restore(
        dim: usize,
        params: HnswParams,
        items: Vec<IndexedItem>,
        next_id: u64,
    ) -> Result<Self, IndexError> {
        let mut idx = HnswIndex::new(dim, params);
        let mut items = items;
        items.sort_by_key(|it| it.item_id);
        for it in items {
            idx.reg.restore(&it)?;
            idx.insert(it);
        }
        idx.refine(0);
        idx.reg.next_id = idx.reg.next_id.max(next_id);
        Ok(idx)
    }

    fn level_for(&self, item_id: u64) -> usize {
        let ml = 1.0 / (self.params.m as f64).ln();
        // uniform in (0, 1]
        let u = ((splitmix64(item_id) >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        ((-u.ln() * ml).floor() as usize).min(16)
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    fn sim(&self, q: &[f32], node: u32) -> f64 {
        f64::from(fast_dot(q, self.nodes[node as usize].item.vector.values()))
    }

    fn greedy(&self, q: &[f32], mut cur: u32, layer: usize) -> u32 {
        let mut best = self.sim(q, cur);
        loop {
            let mut moved = false;
            for &n in &self.nodes[cur as usize].links[layer] {
                let s = self.sim(q, n);
                if s > best {
                    best = s;
                    cur = n;
                    moved = true;
                }
            }
            if !moved {
                return cur;
            }
        }
    }

    /// Beam search on one layer. Returns up to `ef` best nodes accepted by
    /// `admit`, unsorted; every visited node is used for navigation.
    fn search_layer(
        &self,
        q: &[f32],
        entry: &[u32],
        ef: usize,
        layer: usize,
        admit: &dyn Fn(&Node) -> bool,
        visited: &mut Visited,
    ) -> Vec<Scored> {
        visited.reset(self.nodes.len());
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        // min-heap of accepted results via Reverse ordering
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &e in entry {
            if visited.insert(e) {
                let s = Scored(self.sim(q, e), e);
                candidates.push(s);
                if admit(&self.nodes[e as usize]) {
                    results.push(std::cmp::Reverse(s));
                }
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            if results.len() >= ef {
                if let Some(std::cmp::Reverse(worst)) = results.peek() {
                    if c.0 < worst.0 {
                        break;
                    }
                }
            }
            for &n in &self.nodes[c.1 as usize].links[layer] {
                if !visited.insert(n) {
                    continue;
                }
                let s = Scored(self.sim(q, n), n);
                let worst = results.peek().map(|r| r.0 .0);
                if results.len() < ef || worst.is_some_and(|w| s.0 > w) {
                    candidates.push(s);
                    if admit(&self.nodes[n as usize]) {
                        results.push(std::cmp::Reverse(s));
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }
        results.into_iter().map(|r| r.0).collect()
    }

    /// Neighbor selection heuristic: keep a candidate only if it is closer to
    /// the base than to every neighbor kept so far; fill any remaining slots
    /// with the best discarded candidates.
    fn select_neighbors(&self, mut cands: Vec<Scored>, limit: usize) -> Vec<u32> {
        cands.sort_by(|a, b| b.cmp(a));
        let mut kept: Vec<Scored> = Vec::with_capacity(limit);
        let mut pruned = Vec::new();
        for c in cands {
            if kept.len() >= limit {
                break;
            }
            let cv = self.nodes[c.1 as usize].item.vector.values();
            let diverse = kept
                .iter()
                .all(|k| f64::from(fast_dot(cv, self.nodes[k.1 as usize].item.vector.values())) < c.0);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for p in pruned {
            if kept.len() >= limit {
                break;
            }
            kept.push(p);
        }
        kept.into_iter().map(|s| s.1).collect()
    }

    fn insert(&mut self, item: IndexedItem) {
        let level = self.level_for(item.item_id);
        let id = self.nodes.len() as u32;
        let q: Vec<f32> = item.vector.values().to_vec();
        self.nodes.push(Node {
            item,
            links: vec![Vec::new(); level + 1],
            deleted: false,
        });
        self.live += 1;

        let Some(mut ep) = self.entry else {
            self.entry = Some(id);
            self.top_layer = level;
            return;
        };

        for layer in (level + 1..=self.top_layer).rev() {
            ep = self.greedy(&q, ep, layer);
        }
        let mut visited = Visited::default();
        let mut eps = vec![ep];
        for layer in (0..=level.min(self.top_layer)).rev() {
            let found = self.search_layer(
                &q,
                &eps,
                self.params.ef_construction,
                layer,
                &|_| true,
                &mut visited,
            );
            let found: Vec<Scored> = found.into_iter().filter(|s| s.1 != id).collect();
            let limit = self.max_links(layer);
            let chosen = self.select_neighbors(found.clone(), limit);
            self.nodes[id as usize].links[layer] = chosen.clone();
            for &n in &chosen {
                self.nodes[n as usize].links[layer].push(id);
                if self.nodes[n as usize].links[layer].len() > limit {
                    let nv = self.nodes[n as usize].item.vector.values().to_vec();
                    let cands: Vec<Scored> = self.nodes[n as usize].links[layer]
                        .iter()
                        .map(|&x| Scored(self.sim(&nv, x), x))
                        .collect();
                    let shrunk = self.select_neighbors(cands, limit);
                    self.nodes[n as usize].links[layer] = shrunk;
                }
            }
            eps = found.iter().map(|s| s.1).collect();
            if eps.is_empty() {
                eps.push(ep);
            }
        }
        if level > self.top_layer {
            self.top_layer = level;
            self.entry = Some(id);
        }
    }

    /// Second pass over freshly inserted nodes: search layer 0 again now that
    /// the rest of the batch is present, merge with the current links and
    /// re-select. Nodes inserted late otherwise end up poorly connected.
    fn refine(&mut self, first: usize) {
        let Some(entry) = self.entry else { return };
        let limit = self.max_links(0);
        let mut visited = Visited::default();
        for id in first as u32..self.nodes.len() as u32 {
            let q = self.nodes[id as usize].item.vector.values().to_vec();
            let mut ep = entry;
            for layer in (1..=self.top_layer).rev() {
                ep = self.greedy(&q, ep, layer);
            }
            let mut cands = self.search_layer(&q, &[ep], self.params.ef_construction, 0, &|_| true, &mut visited);
            for &n in &self.nodes[id as usize].links[0] {
                if !cands.iter().any(|c| c.1 == n) {
                    cands.push(Scored(self.sim(&q, n), n));
                }
            }
            cands.retain(|c| c.1 != id);
            let chosen = self.select_neighbors(cands, limit);
            for &n in &chosen {
                if self.nodes[n as usize].links[0].contains(&id) {
                    continue;
                }
                self.nodes[n as usize].links[0].push(id);
                if self.nodes[n as usize].links[0].len() > limit {
                    let nv = self.nodes[n as usize].item.vector.values().to_vec();
                    let cands: Vec<Scored> = self.nodes[n as usize].links[0]
                        .iter()
                        .map(|&x| Scored(self.sim(&nv, x), x))
                        .collect();
                    self.nodes[n as usize].links[0] = self.select_neighbors(cands, limit);
                }
            }
            self.nodes[id as usize].links[0] = chosen;
        }
    }

    fn brute_force(&self, q: &[f32], k: usize, filter: &MetadataFilter) -> Vec<Hit> {
        let mut hits: Vec<Hit> = self
            .nodes
            .iter()
            .filter(|n| !n.deleted && filter.matches(&n.item))
            .map(|n| Hit::of(&n.item, dot(q, n.item.vector.values())))
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(k);
        hits
    }
}

/// f32 dot product over eight independent lanes; used only for graph
/// navigation.
#[inline]
fn fast_dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    lanes.iter().sum::<f32>() + tail
}

#[derive(Default)]
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    fn insert(&mut self, n: u32) -> bool {
        let m = &mut self.marks[n as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

impl VectorIndex for HnswIndex {
    fn kind(&self) -> BackendKind {
        BackendKind::Hnsw
    }

    fn dim(&self) -> usize {
        self.reg.dim
    }

    fn len(&self) -> usize {
        self.live
    }

    fn upsert(&mut self, items: Vec<NewItem>) -> Result<Vec<u64>, IndexError> {
        let admitted = self.reg.admit(items)?;
        let ids = admitted.iter().map(|it| it.item_id).collect();
        let first = self.nodes.len();
        for it in admitted {
            self.insert(it);
        }
        self.refine(first);
        Ok(ids)
    }

    fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: &MetadataFilter,
    ) -> Result<Vec<Hit>, IndexError> {
        self.reg.check_query(query, k)?;
        let Some(entry) = self.entry else {
            return Ok(Vec::new());
        };
        let q = query.values();
        let ef = self.params.ef_search.max(k);

        // Selective filters (or heavy tombstoning) go straight to a scan of
        // the matching candidates.
        let matching = if filter.is_empty() {
            self.live
        } else {
            self.nodes
                .iter()
                .filter(|n| !n.deleted && filter.matches(&n.item))
                .count()
        };
        if matching == 0 {
            return Ok(Vec::new());
        }
        if matching <= ef * 4 || matching * 10 < self.nodes.len() {
            return Ok(self.brute_force(q, k, filter));
        }

        let mut ep = entry;
        for layer in (1..=self.top_layer).rev() {
            ep = self.greedy(q, ep, layer);
        }
        let mut visited = Visited::default();
        let admit = |n: &Node| !n.deleted && filter.matches(&n.item);
        let found = self.search_layer(q, &[ep], ef, 0, &admit, &mut visited);
        // rescore with the exact f64 dot so scores agree with the exact backend
        let mut hits: Vec<Hit> = found
            .into_iter()
            .map(|s| {
                let item = &self.nodes[s.1 as usize].item;
                Hit::of(item, dot(q, item.vector.values()))
            })
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(k);
        Ok(hits)
    }

    fn delete_document(&mut self, doc_id: &DocId) -> Result<usize, IndexError> {
        let mut removed = 0;
        for n in self.nodes.iter_mut().filter(|n| !n.deleted && &n.item.doc_id == doc_id) {
            n.deleted = true;
            self.reg.forget(&n.item.doc_id, &n.item.chunk_id);
            removed += 1;
        }
        self.live -= removed;
        Ok(removed)
    }

    fn contains_document(&self, doc_id: &DocId) -> Result<bool, IndexError> {
        Ok(self.nodes.iter().any(|n| !n.deleted && &n.item.doc_id == doc_id))
    }

    fn export(&self) -> Result<(Vec<IndexedItem>, u64), IndexError> {
        let items = self
            .nodes
            .iter()
            .filter(|n| !n.deleted)
            .map(|n| n.item.clone())
            .collect();
        Ok((items, self.reg.next_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::test_support::items;
    use crate::index::ExactIndex;

    fn recall(n: usize, dim: usize, queries: usize) -> f64 {
        let batch = items(n, dim, 42, 10);
        let mut exact = ExactIndex::new(dim);
        let mut hnsw = HnswIndex::new(dim, HnswParams::default());
        exact.upsert(batch.clone()).unwrap();
        hnsw.upsert(batch).unwrap();
        let qs = items(queries, dim, 4242, 1);
        let mut found = 0;
        for q in &qs {
            let truth = exact.top_k(&q.vector, 10, &MetadataFilter::all()).unwrap();
            let got = hnsw.top_k(&q.vector, 10, &MetadataFilter::all()).unwrap();
            found += got.iter().filter(|h| truth.iter().any(|t| t.item_id == h.item_id)).count();
        }
        found as f64 / (queries * 10) as f64
    }

    #[test]
    fn small_graph_recall() {
        let r = recall(2000, 32, 50);
        assert!(r >= 0.95, "recall {r}");
    }

    #[test]
    fn self_retrieval_and_tombstones() {
        let batch = items(1500, 16, 9, 3);
        let mut idx = HnswIndex::new(16, HnswParams::default());
        idx.upsert(batch.clone()).unwrap();
        let hits = idx.top_k(&batch[100].vector, 1, &MetadataFilter::all()).unwrap();
        assert_eq!(hits[0].item_id, 100);
        let removed = idx.delete_document(&DocId("d1".into())).unwrap();
        assert_eq!(removed, 500);
        assert_eq!(idx.len(), 1000);
        let hits = idx.top_k(&batch[100].vector, 20, &MetadataFilter::all()).unwrap();
        assert!(hits.iter().all(|h| h.doc_id.as_str() != "d1"));
    }

    #[test]
    fn filtered_queries_only_return_matches() {
        let batch = items(3000, 16, 11, 2);
        let mut idx = HnswIndex::new(16, HnswParams::default());
        idx.upsert(batch.clone()).unwrap();
        for filter in [
            MetadataFilter::doc(&DocId("d0".into())),
            MetadataFilter::all().and("kind", "k2"),
            MetadataFilter::doc(&DocId("d1".into())).and("kind", "k0"),
        ] {
            let hits = idx.top_k(&batch[5].vector, 10, &filter).unwrap();
            assert_eq!(hits.len(), 10);
            for h in hits {
                let it = &batch[h.item_id as usize];
                let item = IndexedItem {
                    item_id: h.item_id,
                    doc_id: it.doc_id.clone(),
                    chunk_id: it.chunk_id.clone(),
                    vector: it.vector.clone(),
                    metadata: it.metadata.clone(),
                };
                assert!(filter.matches(&item));
            }
        }
    }

    #[test]
    fn levels_are_deterministic() {
        let idx = HnswIndex::new(4, HnswParams::default());
        let a: Vec<usize> = (0..100).map(|i| idx.level_for(i)).collect();
        let b: Vec<usize> = (0..100).map(|i| idx.level_for(i)).collect();
        assert_eq!(a, b);
        assert!(a.iter().filter(|&&l| l == 0).count() > 80);
    }
}
