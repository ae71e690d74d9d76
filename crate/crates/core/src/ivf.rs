//! Inverted-file index: probe the `np` best centroids, scan their lists.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clustering::{assign_lists, nearest_centroid, train_kmeans, CentroidSet, PostingLists};
use crate::error::{invalid, Result};
use crate::vector::{check_query, rank_indices, score_matrix, score_rows, ScoredHit, TopK, VectorStore, WorkCounter};
use crate::Scalar;

/// Work split into the two IVF cost components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IvfWork {
    /// Query-to-centroid similarity evaluations.
    pub centroid: WorkCounter,
    /// Query-to-document evaluations while scanning probed lists.
    pub scan: WorkCounter,
}

impl IvfWork {
    pub fn total(&self) -> WorkCounter {
        WorkCounter {
            similarity_evaluations: self.centroid.get() + self.scan.get(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IvfIndex<T> {
    store: Arc<VectorStore<T>>,
    centroids: CentroidSet<T>,
    lists: PostingLists,
}

impl<T: Scalar> IvfIndex<T> {
    /// Trains `p` centroids on the store and assigns every row to a list.
    pub fn build(store: Arc<VectorStore<T>>, p: usize, max_iters: usize, seed: u64) -> Result<Self> {
        let centroids = train_kmeans(&store, p, max_iters, seed)?;
        let lists = assign_lists(&store, &centroids)?;
        Ok(Self {
            store,
            centroids,
            lists,
        })
    }

    /// Reassembles an index from persisted parts. Checks shapes and the
    /// partition; [`IvfIndex::verify_assignment`] does the full nearest-centroid check.
    pub fn from_parts(
        store: Arc<VectorStore<T>>,
        centroids: CentroidSet<T>,
        lists: PostingLists,
    ) -> Result<Self> {
        if centroids.dim() != store.dim() {
            return Err(invalid("centroid dimension differs from store dimension"));
        }
        if centroids.p() != lists.len() {
            return Err(invalid(format!(
                "{} centroids but {} lists",
                centroids.p(),
                lists.len()
            )));
        }
        if lists.total() != store.len() {
            return Err(invalid(format!(
                "lists cover {} rows, store has {}",
                lists.total(),
                store.len()
            )));
        }
        Ok(Self {
            store,
            centroids,
            lists,
        })
    }

    /// Checks that every list holds exactly the rows whose nearest centroid it is.
    pub fn verify_assignment(&self) -> Result<()> {
        for (li, list) in self.lists.iter().enumerate() {
            if let Some(id) = list
                .iter()
                .find(|id| nearest_centroid(self.store.row(**id), &self.centroids) != li)
            {
                return Err(invalid(format!(
                    "row {id} is stored in list {li} but is nearer another centroid"
                )));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.centroids.p()
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn store(&self) -> &Arc<VectorStore<T>> {
        &self.store
    }

    pub fn centroids(&self) -> &CentroidSet<T> {
        &self.centroids
    }

    pub fn lists(&self) -> &PostingLists {
        &self.lists
    }

    /// Scores `q` against all `p` centroids (counting `p` evaluations).
    pub fn score_centroids(&self, q: &[T], counter: &mut WorkCounter) -> Result<Vec<T>> {
        check_query(self.dim(), q)?;
        let mut scores = Vec::new();
        score_matrix(q, self.centroids.as_slice(), &mut scores);
        counter.add(self.p() as u64);
        Ok(scores)
    }

    /// `top_count(q, C)` as centroid indices, best first.
    pub fn rank_centroids(&self, q: &[T], count: usize, counter: &mut WorkCounter) -> Result<Vec<usize>> {
        let scores = self.score_centroids(q, counter)?;
        Ok(rank_indices(&scores, count))
    }

    /// Exhaustive top-k over the union of the given lists, scanned in order.
    pub fn scan_lists(
        &self,
        q: &[T],
        lists: &[usize],
        k: usize,
        counter: &mut WorkCounter,
    ) -> Result<Vec<ScoredHit<T>>> {
        check_query(self.dim(), q)?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let mut best = TopK::new(k);
        for &li in lists {
            if li >= self.p() {
                return Err(invalid(format!("list {li} out of range (p={})", self.p())));
            }
            let ids = self.lists.list(li);
            score_rows(q, ids.iter().map(|id| self.store.row(*id)), |j, s| {
                best.push(ids[j].0, s)
            });
            counter.add(ids.len() as u64);
        }
        Ok(best.into_hits())
    }

    /// Standard IVF search. Returns fewer than `k` hits when the probed lists
    /// hold fewer than `k` documents.
    pub fn search(&self, q: &[T], k: usize, np: usize, work: &mut IvfWork) -> Result<Vec<ScoredHit<T>>> {
        if np == 0 || np > self.p() {
            return Err(invalid(format!(
                "nprobe={np} must satisfy 1 <= np <= p={}",
                self.p()
            )));
        }
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let probe = self.rank_centroids(q, np, &mut work.centroid)?;
        self.scan_lists(q, &probe, k, &mut work.scan)
    }
}
