//! Hierarchical navigable small world graph.
//!
//! Canonical single-graph HNSW. Links are chosen with the diversity
//! heuristic: a candidate is kept only if it is closer to the base node than
//! to every link already kept, so clustered data still gets bridges between
//! clusters. Each node keeps at most `M` links per upper layer and `2M` at
//! layer 0.
//! Levels are drawn as `floor(-ln(u) / ln(M))`.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::vector::{check_query, dot, score_rows, DocId, Ranked, ScoredHit, VectorStore, WorkCounter};
use crate::Scalar;

pub const DEFAULT_M: usize = 16;
pub const DEFAULT_EF_CONSTRUCTION: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            ef_construction: DEFAULT_EF_CONSTRUCTION,
            seed: 0,
        }
    }
}

/// Query-time candidate list capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchParams {
    pub ef_search: usize,
}

impl SearchParams {
    pub fn new(ef_search: usize) -> Self {
        Self { ef_search }
    }
}

/// Per-thread visited marks. A fresh epoch per traversal makes reset O(1).
#[derive(Default)]
struct Visited {
    tags: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn begin(&mut self, n: usize) {
        if self.tags.len() < n {
            self.tags.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.tags.iter_mut().for_each(|t| *t = 0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `i` is seen in this epoch.
    #[inline]
    fn insert(&mut self, i: u32) -> bool {
        let tag = &mut self.tags[i as usize];
        if *tag == self.epoch {
            false
        } else {
            *tag = self.epoch;
            true
        }
    }
}

thread_local! {
    static VISITED: RefCell<Visited> = RefCell::new(Visited::default());
}

#[derive(Clone, Debug)]
pub struct HnswGraph<T> {
    store: Arc<VectorStore<T>>,
    m: usize,
    max_layer: usize,
    /// `links[node][layer]`, one list per layer the node belongs to.
    links: Vec<Vec<Vec<DocId>>>,
    entry: DocId,
}

impl<T: Scalar> HnswGraph<T> {
    /// Inserts every row in store order.
    pub fn build(store: Arc<VectorStore<T>>, params: HnswParams) -> Result<Self> {
        if store.is_empty() {
            return Err(invalid("cannot build a graph over an empty store"));
        }
        if params.m < 2 {
            return Err(invalid(format!("M={} must be at least 2", params.m)));
        }
        if params.ef_construction == 0 {
            return Err(invalid("ef_construction must be at least 1"));
        }
        let n = store.len();
        let mut graph = Self {
            store,
            m: params.m,
            max_layer: 0,
            links: Vec::with_capacity(n),
            entry: DocId(0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.m as f64).ln();
        let mut visited = Visited::default();
        for node in 0..n {
            let u = 1.0 - rng.random::<f64>();
            let level = (-u.ln() * level_mult).floor() as usize;
            graph.insert(DocId(node as u32), level, params.ef_construction, &mut visited);
        }
        Ok(graph)
    }

    /// Reassembles a graph from persisted adjacency and validates it.
    pub fn from_parts(
        store: Arc<VectorStore<T>>,
        m: usize,
        links: Vec<Vec<Vec<DocId>>>,
        entry: DocId,
    ) -> Result<Self> {
        if links.len() != store.len() || store.is_empty() {
            return Err(invalid(format!(
                "{} adjacency records for {} rows",
                links.len(),
                store.len()
            )));
        }
        let max_layer = links.iter().map(|l| l.len().saturating_sub(1)).max().unwrap_or(0);
        let graph = Self {
            store,
            m,
            max_layer,
            links,
            entry,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn store(&self) -> &Arc<VectorStore<T>> {
        &self.store
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn max_layer(&self) -> usize {
        self.max_layer
    }

    pub fn global_entry(&self) -> DocId {
        self.entry
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Highest layer of `node`.
    pub fn level(&self, node: DocId) -> usize {
        self.links[node.index()].len() - 1
    }

    pub fn neighbors(&self, node: DocId, layer: usize) -> &[DocId] {
        self.links[node.index()]
            .get(layer)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn capacity(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }

    fn insert(&mut self, node: DocId, level: usize, ef_construction: usize, visited: &mut Visited) {
        self.links.push(vec![Vec::new(); level + 1]);
        if node.0 == 0 {
            self.entry = node;
            self.max_layer = level;
            return;
        }
        let q = self.store.row(node).to_vec();
        let mut scratch = WorkCounter::new();
        let mut cur = Ranked {
            score: dot(&q, self.store.row(self.entry)),
            id: self.entry.0,
        };
        for layer in (level + 1..=self.max_layer).rev() {
            cur = self.greedy(&q, cur, layer, &mut scratch);
        }
        let mut entries = vec![cur];
        for layer in (0..=level.min(self.max_layer)).rev() {
            let found = self.search_layer(&q, &entries, ef_construction, layer, visited, &mut scratch);
            let chosen = self.select(&found, self.capacity(layer));
            for &nb in &chosen {
                self.link(nb, node, layer);
            }
            self.links[node.index()][layer] = chosen;
            entries = found;
        }
        if level > self.max_layer {
            self.max_layer = level;
            self.entry = node;
        }
    }

    /// Diversity heuristic over candidates sorted best first.
    fn select(&self, sorted: &[Ranked<T>], cap: usize) -> Vec<DocId> {
        let mut kept: Vec<DocId> = Vec::with_capacity(cap);
        for c in sorted {
            if kept.len() == cap {
                break;
            }
            let row = self.store.row(DocId(c.id));
            if kept.iter().all(|k| dot(row, self.store.row(*k)) < c.score) {
                kept.push(DocId(c.id));
            }
        }
        kept
    }

    /// Adds `to` to `from`'s list at `layer`, re-selecting with the heuristic on overflow.
    fn link(&mut self, from: DocId, to: DocId, layer: usize) {
        let cap = self.capacity(layer);
        let list = &mut self.links[from.index()][layer];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = self.store.row(from);
        let mut ranked: Vec<Ranked<T>> = list
            .iter()
            .map(|id| Ranked {
                score: dot(base, self.store.row(*id)),
                id: id.0,
            })
            .collect();
        ranked.sort_unstable_by(|a, b| b.cmp(a));
        let kept = self.select(&ranked, cap);
        self.links[from.index()][layer] = kept;
    }

    /// Beam-width-1 descent within one layer.
    fn greedy(&self, q: &[T], start: Ranked<T>, layer: usize, counter: &mut WorkCounter) -> Ranked<T> {
        let mut cur = start;
        loop {
            let nbs = self.neighbors(DocId(cur.id), layer);
            let mut next = cur;
            score_rows(q, nbs.iter().map(|id| self.store.row(*id)), |j, s| {
                let cand = Ranked { score: s, id: nbs[j].0 };
                if cand > next {
                    next = cand;
                }
            });
            counter.add(nbs.len() as u64);
            if next.id == cur.id {
                return cur;
            }
            cur = next;
        }
    }

    /// Best-first expansion with a result set bounded at `ef`. Returns the
    /// result set best first.
    fn search_layer(
        &self,
        q: &[T],
        entries: &[Ranked<T>],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
        counter: &mut WorkCounter,
    ) -> Vec<Ranked<T>> {
        visited.begin(self.len());
        let mut candidates: BinaryHeap<Ranked<T>> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Ranked<T>>> = BinaryHeap::new();
        for e in entries {
            if visited.insert(e.id) {
                candidates.push(*e);
                results.push(Reverse(*e));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        let mut fresh: Vec<DocId> = Vec::with_capacity(2 * self.m);
        while let Some(c) = candidates.pop() {
            if let Some(Reverse(worst)) = results.peek() {
                if results.len() >= ef && c < *worst {
                    break;
                }
            }
            fresh.clear();
            fresh.extend(
                self.neighbors(DocId(c.id), layer)
                    .iter()
                    .copied()
                    .filter(|id| visited.insert(id.0)),
            );
            counter.add(fresh.len() as u64);
            score_rows(q, fresh.iter().map(|id| self.store.row(*id)), |j, s| {
                let cand = Ranked { score: s, id: fresh[j].0 };
                let admit = results.len() < ef
                    || results.peek().map_or(true, |Reverse(w)| cand > *w);
                if admit {
                    candidates.push(cand);
                    results.push(Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            });
        }
        let mut out: Vec<Ranked<T>> = results.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    fn base_layer_search(
        &self,
        q: &[T],
        seed: Ranked<T>,
        k: usize,
        ef: usize,
        counter: &mut WorkCounter,
    ) -> Vec<ScoredHit<T>> {
        VISITED.with(|v| {
            let mut visited = v.borrow_mut();
            let found = self.search_layer(q, &[seed], ef, 0, &mut visited, counter);
            found
                .into_iter()
                .take(k)
                .map(|r| ScoredHit {
                    id: DocId(r.id),
                    score: r.score,
                })
                .collect()
        })
    }

    fn check_search(&self, q: &[T], k: usize, params: SearchParams) -> Result<()> {
        check_query(self.store.dim(), q)?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if params.ef_search < k {
            return Err(invalid(format!(
                "ef_search={} must be at least k={k}",
                params.ef_search
            )));
        }
        Ok(())
    }

    /// Greedy descent from the global entry to layer 1, then best-first search
    /// at layer 0. Every similarity evaluation is counted.
    pub fn search(
        &self,
        q: &[T],
        k: usize,
        params: SearchParams,
        counter: &mut WorkCounter,
    ) -> Result<Vec<ScoredHit<T>>> {
        self.check_search(q, k, params)?;
        let mut cur = Ranked {
            score: dot(q, self.store.row(self.entry)),
            id: self.entry.0,
        };
        counter.add(1);
        for layer in (1..=self.max_layer).rev() {
            cur = self.greedy(q, cur, layer, counter);
        }
        Ok(self.base_layer_search(q, cur, k, params.ef_search, counter))
    }

    /// Layer-0 search seeded directly with `entry`; no upper-layer descent.
    pub fn search_from(
        &self,
        q: &[T],
        k: usize,
        params: SearchParams,
        entry: DocId,
        counter: &mut WorkCounter,
    ) -> Result<Vec<ScoredHit<T>>> {
        self.check_search(q, k, params)?;
        if entry.index() >= self.len() {
            return Err(invalid(format!("entry {entry} is not a graph node")));
        }
        let seed = Ranked {
            score: dot(q, self.store.row(entry)),
            id: entry.0,
        };
        counter.add(1);
        Ok(self.base_layer_search(q, seed, k, params.ef_search, counter))
    }

    /// The layer-0 node plain search reaches after descending the upper layers.
    pub fn descend(&self, q: &[T], counter: &mut WorkCounter) -> Result<DocId> {
        check_query(self.store.dim(), q)?;
        let mut cur = Ranked {
            score: dot(q, self.store.row(self.entry)),
            id: self.entry.0,
        };
        counter.add(1);
        for layer in (1..=self.max_layer).rev() {
            cur = self.greedy(q, cur, layer, counter);
        }
        Ok(DocId(cur.id))
    }

    /// Nodes reachable from `from` over layer-0 links.
    pub fn reachable_at_base(&self, from: DocId) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([from]);
        seen[from.index()] = true;
        while let Some(node) = queue.pop_front() {
            for nb in self.neighbors(node, 0) {
                if !std::mem::replace(&mut seen[nb.index()], true) {
                    queue.push_back(*nb);
                }
            }
        }
        seen
    }

    /// Checks the structural invariants: list sizes, layer membership of every
    /// neighbour, no self links or duplicates, entry on the top layer.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidState(msg));
        if self.m < 2 {
            return bad(format!("M={} is below 2", self.m));
        }
        if self.entry.index() >= self.len() {
            return bad(format!("entry {} out of range", self.entry));
        }
        if self.level(self.entry) != self.max_layer {
            return bad(format!(
                "entry {} has level {} but max layer is {}",
                self.entry,
                self.level(self.entry),
                self.max_layer
            ));
        }
        for (node, layers) in self.links.iter().enumerate() {
            if layers.is_empty() {
                return bad(format!("node {node} has no layers"));
            }
            for (layer, list) in layers.iter().enumerate() {
                if list.len() > self.capacity(layer) {
                    return bad(format!(
                        "node {node} has {} links at layer {layer}",
                        list.len()
                    ));
                }
                let mut sorted: Vec<u32> = list.iter().map(|d| d.0).collect();
                sorted.sort_unstable();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return bad(format!("node {node} has duplicate links at layer {layer}"));
                }
                for nb in list {
                    if nb.index() >= self.len() || nb.index() == node {
                        return bad(format!("node {node} has invalid link {nb}"));
                    }
                    if self.level(*nb) < layer {
                        return bad(format!(
                            "node {node} links to {nb} at layer {layer} above its level"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Adjacency as stored, for persistence.
    pub fn links(&self) -> &[Vec<Vec<DocId>>] {
        &self.links
    }
}
