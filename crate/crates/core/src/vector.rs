//! Dense vector storage, dot-product scoring and exact top-k selection.
//!
//! The dot product is accumulated sequentially in index order
//! (`acc = acc + q[i] * x[i]`). That order is the reference every index in the
//! crate reproduces bit for bit, so exact and approximate searches agree on
//! ties and on scores. The batched kernel [`score_rows`] keeps the same
//! per-row order and only interleaves independent rows.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::Scalar;

/// Row position of a document in its [`VectorStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub u32);

impl DocId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One search result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredHit<T> {
    pub id: DocId,
    pub score: T,
}

/// Number of vector-pair similarity evaluations performed by one search call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkCounter {
    pub similarity_evaluations: u64,
}

impl WorkCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, evaluations: u64) {
        self.similarity_evaluations += evaluations;
    }

    #[inline]
    pub fn get(&self) -> u64 {
        self.similarity_evaluations
    }
}

/// Sequential dot product. Callers guarantee equal lengths.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Checked, counted dot product.
pub fn similarity<T: Scalar>(q: &[T], x: &[T], counter: &mut WorkCounter) -> Result<T> {
    if q.len() != x.len() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            q.len(),
            x.len()
        )));
    }
    counter.add(1);
    Ok(dot(q, x))
}

const LANES: usize = 8;

#[inline]
fn dot_lanes<T: Scalar>(q: &[T], rows: [&[T]; LANES]) -> [T; LANES] {
    let d = q.len();
    let rows = rows.map(|r| &r[..d]);
    let mut acc = [T::zero(); LANES];
    for i in 0..d {
        let qi = q[i];
        for l in 0..LANES {
            acc[l] = acc[l] + qi * rows[l][i];
        }
    }
    acc
}

/// Scores `q` against every row, calling `sink(position, score)` in row order.
///
/// Rows are processed eight at a time for instruction-level parallelism; each
/// score is bit-identical to [`dot`]. Does not touch any [`WorkCounter`].
pub(crate) fn score_rows<'a, T, I, F>(q: &[T], rows: I, mut sink: F)
where
    T: Scalar + 'a,
    I: IntoIterator<Item = &'a [T]>,
    F: FnMut(usize, T),
{
    let mut buf: [&[T]; LANES] = [&[]; LANES];
    let mut filled = 0;
    let mut base = 0;
    for row in rows {
        buf[filled] = row;
        filled += 1;
        if filled == LANES {
            for (j, s) in dot_lanes(q, buf).into_iter().enumerate() {
                sink(base + j, s);
            }
            base += LANES;
            filled = 0;
        }
    }
    for (j, row) in buf[..filled].iter().enumerate() {
        sink(base + j, dot(q, row));
    }
}

/// Scores `q` against a contiguous row-major matrix.
pub(crate) fn score_matrix<T: Scalar>(q: &[T], matrix: &[T], out: &mut Vec<T>) {
    let dim = q.len();
    out.clear();
    out.reserve(matrix.len() / dim.max(1));
    score_rows(q, matrix.chunks_exact(dim), |_, s| out.push(s));
}

/// Total order on (score, id): higher score is better, lower id wins exact ties.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Ranked<T> {
    pub score: T,
    pub id: u32,
}

impl<T: Scalar> PartialEq for Ranked<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Ranked<T> {}

impl<T: Scalar> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Ranked<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .partial_cmp(&other.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Bounded collector keeping the `k` best (score, id) pairs.
pub(crate) struct TopK<T: Scalar> {
    k: usize,
    heap: BinaryHeap<Reverse<Ranked<T>>>,
}

impl<T: Scalar> TopK<T> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, id: u32, score: T) {
        let item = Ranked { score, id };
        if self.heap.len() < self.k {
            self.heap.push(Reverse(item));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if item > *worst {
                self.heap.pop();
                self.heap.push(Reverse(item));
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Ranked<T>> {
        let mut v: Vec<Ranked<T>> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }

    pub fn into_hits(self) -> Vec<ScoredHit<T>> {
        self.into_sorted()
            .into_iter()
            .map(|r| ScoredHit {
                id: DocId(r.id),
                score: r.score,
            })
            .collect()
    }
}

/// Indices of the `count` highest scores, best first, ties by lower index.
pub(crate) fn rank_indices<T: Scalar>(scores: &[T], count: usize) -> Vec<usize> {
    let count = count.min(scores.len());
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    let better = |a: &u32, b: &u32| {
        Ranked {
            score: scores[*b as usize],
            id: *b,
        }
        .cmp(&Ranked {
            score: scores[*a as usize],
            id: *a,
        })
    };
    if count == 0 {
        return Vec::new();
    }
    if count < idx.len() {
        idx.select_nth_unstable_by(count - 1, better);
        idx.truncate(count);
    }
    idx.sort_unstable_by(better);
    idx.into_iter().map(|i| i as usize).collect()
}

/// Exact top-k over an arbitrary subset of `(id, vector)` pairs.
///
/// Returns `min(k, |subset|)` hits sorted by descending score, ascending id on
/// ties, and counts exactly one evaluation per subset element.
pub fn top_k<'a, T, I>(
    q: &[T],
    subset: I,
    k: usize,
    counter: &mut WorkCounter,
) -> Result<Vec<ScoredHit<T>>>
where
    T: Scalar + 'a,
    I: IntoIterator<Item = (DocId, &'a [T])>,
{
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut best = TopK::new(k);
    for (id, x) in subset {
        let s = similarity(q, x, counter)?;
        best.push(id.0, s);
    }
    Ok(best.into_hits())
}

pub(crate) fn check_query<T: Scalar>(dim: usize, q: &[T]) -> Result<()> {
    if q.len() != dim {
        return Err(invalid(format!(
            "query has dimension {}, index expects {dim}",
            q.len()
        )));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(invalid("query contains a non-finite component"));
    }
    Ok(())
}

/// Immutable `n × d` matrix of document embeddings with unique string ids.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorStore<T> {
    dim: usize,
    data: Vec<T>,
    ids: Vec<String>,
    lookup: HashMap<String, DocId>,
}

impl<T: Scalar> VectorStore<T> {
    /// Builds a store from row-major `data` (length `ids.len() * dim`).
    pub fn new(dim: usize, data: Vec<T>, ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if data.len() != ids.len() * dim {
            return Err(invalid(format!(
                "{} values do not form {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        if ids.len() > u32::MAX as usize {
            return Err(invalid("too many rows"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite value in row '{}'",
                ids[pos / dim]
            )));
        }
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), DocId(i as u32)).is_some() {
                return Err(invalid(format!("duplicate id '{id}'")));
            }
        }
        Ok(Self {
            dim,
            data,
            ids,
            lookup,
        })
    }

    pub fn from_rows<S: Into<String>>(
        dim: usize,
        rows: impl IntoIterator<Item = (S, Vec<T>)>,
    ) -> Result<Self> {
        let mut data = Vec::new();
        let mut ids = Vec::new();
        for (id, row) in rows {
            let id = id.into();
            if row.len() != dim {
                return Err(invalid(format!(
                    "row '{id}' has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(&row);
            ids.push(id);
        }
        Self::new(dim, data, ids)
    }

    /// Store with ids `"0"`, `"1"`, ... in row order.
    pub fn from_matrix(dim: usize, data: Vec<T>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { data.len() / dim };
        Self::new(dim, data, (0..n).map(|i| i.to_string()).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn row(&self, id: DocId) -> &[T] {
        let start = id.index() * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (DocId, &[T])> + '_ {
        self.data
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, r)| (DocId(i as u32), r))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, id: DocId) -> &str {
        &self.ids[id.index()]
    }

    pub fn doc_id(&self, id: &str) -> Option<DocId> {
        self.lookup.get(id).copied()
    }

    /// Returns a copy with every row scaled to unit Euclidean norm.
    pub fn normalize_l2(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.dim).enumerate() {
            let norm = dot(row, row).sqrt();
            if norm <= T::zero() {
                return Err(invalid(format!(
                    "row '{}' has zero norm and cannot be normalized",
                    self.ids[i]
                )));
            }
            for v in row.iter_mut() {
                *v = *v / norm;
            }
        }
        Ok(Self {
            dim: self.dim,
            data,
            ids: self.ids.clone(),
            lookup: self.lookup.clone(),
        })
    }

    /// Converts the element type, e.g. to run the same corpus in `f64`.
    pub fn cast<U: Scalar>(&self) -> VectorStore<U> {
        VectorStore {
            dim: self.dim,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
            ids: self.ids.clone(),
            lookup: self.lookup.clone(),
        }
    }

    /// Exhaustive search over the whole store.
    pub fn exact_top_k(
        &self,
        q: &[T],
        k: usize,
        counter: &mut WorkCounter,
    ) -> Result<Vec<ScoredHit<T>>> {
        check_query(self.dim, q)?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let mut best = TopK::new(k);
        score_rows(q, self.data.chunks_exact(self.dim), |i, s| {
            best.push(i as u32, s)
        });
        counter.add(self.len() as u64);
        Ok(best.into_hits())
    }
}
