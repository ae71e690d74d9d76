//! K-means training of the coarse quantizer and dot-product list assignment.
//!
//! Training minimises squared Euclidean distance (k-means++ seeding, Lloyd
//! iterations, largest-cluster steal for empty clusters). The posting lists are
//! then built with the search-time rule: a point goes to the centroid with the
//! highest dot product, lower centroid index on exact ties.

use ndarray::{ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::vector::{score_rows, DocId, VectorStore};
use crate::Scalar;

pub const DEFAULT_MAX_ITERS: usize = 25;

/// `p` centroids of dimension `d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> CentroidSet<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(invalid(format!(
                "{} values do not form a non-empty centroid matrix of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("centroid contains a non-finite value"));
        }
        Ok(Self { dim, data })
    }

    pub fn p(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn centroid(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }
}

/// One list of document ids per centroid; together they partition the store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PostingLists {
    lists: Vec<Vec<DocId>>,
}

impl PostingLists {
    /// Wraps lists after checking they partition `0..n`.
    pub fn new(lists: Vec<Vec<DocId>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        let mut total = 0usize;
        for (li, list) in lists.iter().enumerate() {
            for id in list {
                let i = id.index();
                if i >= n {
                    return Err(invalid(format!("list {li} references row {i} >= {n}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(invalid(format!("row {i} appears in more than one list")));
                }
                total += 1;
            }
        }
        if total != n {
            return Err(invalid(format!("lists cover {total} of {n} rows")));
        }
        Ok(Self { lists })
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn list(&self, i: usize) -> &[DocId] {
        &self.lists[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[DocId]> + '_ {
        self.lists.iter().map(Vec::as_slice)
    }
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] = acc[l] + d * d;
        }
    }
    let mut total: f64 = acc.iter().map(|v| v.to_f64_lossy()).sum();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = (*x - *y).to_f64_lossy();
        total += d * d;
    }
    total
}

fn kmeans_plus_plus<T: Scalar>(store: &VectorStore<T>, p: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = store.len();
    let dim = store.dim();
    let points = store.as_slice();
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(p * dim);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(store.row(DocId(first as u32)));
    let mut weights: Vec<f64> = points
        .par_chunks_exact(dim)
        .map(|x| squared_distance(x, store.row(DocId(first as u32))))
        .collect();

    for _ in 1..p {
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cumulative = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                last_positive = Some(i);
                cumulative += w;
                if cumulative > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.or(last_positive).expect("positive total implies a positive weight")
        } else {
            // Only duplicates of chosen points remain.
            chosen.iter().position(|c| !c).expect("p <= n")
        };
        chosen[next] = true;
        let c = store.row(DocId(next as u32));
        centroids.extend_from_slice(c);
        weights
            .par_iter_mut()
            .zip(points.par_chunks_exact(dim))
            .for_each(|(w, x)| {
                let d = squared_distance(x, c);
                if d < *w {
                    *w = d;
                }
            });
    }
    centroids
}

/// Nearest centroid by squared Euclidean distance, computed blockwise with
/// `|c|^2 - 2 x·c`. Returns the number of points whose assignment changed.
fn assign_euclidean<T: Scalar>(
    store: &VectorStore<T>,
    centroids: &[T],
    assignment: &mut [usize],
) -> usize {
    let dim = store.dim();
    let p = centroids.len() / dim;
    let cmat = ArrayView2::from_shape((p, dim), centroids).expect("centroid shape");
    let cnorm: Vec<T> = cmat.outer_iter().map(|c| c.dot(&c)).collect();
    let two = T::one() + T::one();
    let block = (1 << 22) / p.max(1);
    let block = block.clamp(1, 4096);

    store
        .as_slice()
        .par_chunks(block * dim)
        .zip(assignment.par_chunks_mut(block))
        .map(|(rows, assign)| {
            let b = rows.len() / dim;
            let xmat = ArrayView2::from_shape((b, dim), rows).expect("row block shape");
            let prod = xmat.dot(&cmat.t());
            let mut changed = 0;
            for (i, row) in prod.axis_iter(Axis(0)).enumerate() {
                let mut best = 0;
                let mut best_d = cnorm[0] - two * row[0];
                for j in 1..p {
                    let d = cnorm[j] - two * row[j];
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                if assign[i] != best {
                    assign[i] = best;
                    changed += 1;
                }
            }
            changed
        })
        .sum()
}

fn recompute_centroids<T: Scalar>(
    store: &VectorStore<T>,
    assignment: &[usize],
    p: usize,
    centroids: &mut [T],
) {
    let dim = store.dim();
    let mut sums = vec![0.0f64; p * dim];
    let mut counts = vec![0usize; p];
    for ((_, x), &c) in store.rows().zip(assignment) {
        counts[c] += 1;
        let acc = &mut sums[c * dim..(c + 1) * dim];
        for (a, v) in acc.iter_mut().zip(x) {
            *a += v.to_f64_lossy();
        }
    }
    for c in 0..p {
        if counts[c] == 0 {
            continue;
        }
        let inv = counts[c] as f64;
        for j in 0..dim {
            centroids[c * dim + j] = T::from_f64_lossy(sums[c * dim + j] / inv);
        }
    }
}

/// Moves, for every empty cluster, the point farthest from its centroid in the
/// currently largest cluster. The stolen point becomes the new centroid.
fn repair_empty_clusters<T: Scalar>(
    store: &VectorStore<T>,
    assignment: &mut [usize],
    p: usize,
    centroids: &mut [T],
) {
    let dim = store.dim();
    let mut counts = vec![0usize; p];
    for &c in assignment.iter() {
        counts[c] += 1;
    }
    for empty in 0..p {
        if counts[empty] != 0 {
            continue;
        }
        let largest = (0..p)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("p >= 1");
        let centre = centroids[largest * dim..(largest + 1) * dim].to_vec();
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, &c) in assignment.iter().enumerate() {
            if c != largest {
                continue;
            }
            let d = squared_distance(store.row(DocId(i as u32)), &centre);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let far = far.expect("largest cluster is non-empty");
        assignment[far] = empty;
        counts[largest] -= 1;
        counts[empty] = 1;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(store.row(DocId(far as u32)));
    }
}

/// Trains `p` centroids with k-means++ seeding and at most `max_iters` Lloyd
/// iterations; stops early once no assignment changes.
pub fn train_kmeans<T: Scalar>(
    store: &VectorStore<T>,
    p: usize,
    max_iters: usize,
    seed: u64,
) -> Result<CentroidSet<T>> {
    let n = store.len();
    if p == 0 || p > n {
        return Err(invalid(format!(
            "partition count p={p} must satisfy 1 <= p <= n={n}"
        )));
    }
    if max_iters == 0 {
        return Err(invalid("max_iters must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(store, p, &mut rng);
    let mut assignment = vec![usize::MAX; n];

    for iter in 0..max_iters {
        let changed = assign_euclidean(store, &centroids, &mut assignment);
        log::debug!("k-means iteration {iter}: {changed} reassigned");
        if changed == 0 {
            break;
        }
        repair_empty_clusters(store, &mut assignment, p, &mut centroids);
        recompute_centroids(store, &assignment, p, &mut centroids);
    }
    CentroidSet::new(store.dim(), centroids)
}

/// Nearest centroid by dot product (`top_1(x, C)`), lower index on ties.
pub(crate) fn nearest_centroid<T: Scalar>(x: &[T], centroids: &CentroidSet<T>) -> usize {
    let mut best = 0;
    let mut best_s = T::neg_infinity();
    score_rows(x, centroids.iter(), |j, s| {
        if s > best_s {
            best_s = s;
            best = j;
        }
    });
    best
}

/// Builds posting lists by assigning every row to its nearest centroid.
pub fn assign_lists<T: Scalar>(
    store: &VectorStore<T>,
    centroids: &CentroidSet<T>,
) -> Result<PostingLists> {
    if store.dim() != centroids.dim() {
        return Err(invalid(format!(
            "store dimension {} differs from centroid dimension {}",
            store.dim(),
            centroids.dim()
        )));
    }
    let dim = store.dim();
    let owner: Vec<usize> = store
        .as_slice()
        .par_chunks_exact(dim)
        .map(|x| nearest_centroid(x, centroids))
        .collect();
    let mut lists = vec![Vec::new(); centroids.p()];
    for (i, c) in owner.into_iter().enumerate() {
        lists[c].push(DocId(i as u32));
    }
    Ok(PostingLists { lists })
}
