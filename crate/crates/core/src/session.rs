//! Per-conversation search state exploiting topical locality.
//!
//! [`IvfSession`] scores the first utterance against the full centroid set
//! once, caches the `h` best centroids and answers follow-up turns against the
//! cache only. Drift is monitored with the intersection between the current
//! query's top-`np` cached centroids and the anchor query's; when it drops
//! strictly below `alpha * np` the cache is rebuilt around the current query.
//!
//! [`HnswSession`] answers the first utterance with an enlarged candidate list
//! (`ceil(up * ef)`) and then seeds every later layer-0 search with its top-1
//! result, skipping the upper-layer descent.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hnsw::{HnswGraph, SearchParams};
use crate::ivf::{IvfIndex, IvfWork};
use crate::vector::{check_query, rank_indices, score_matrix, DocId, ScoredHit, WorkCounter};
use crate::Scalar;

/// Outcome of one conversational turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnResult<T> {
    pub hits: Vec<ScoredHit<T>>,
    /// True when this turn rebuilt the centroid cache.
    pub refreshed: bool,
    /// `|I0|` for IVF follow-up turns; `None` on the opening turn and for HNSW.
    pub i0_size: Option<usize>,
    /// All similarity evaluations of the turn.
    pub work: WorkCounter,
    /// Centroid-scoring share of `work` (IVF only).
    pub centroid_evaluations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvfSessionParams {
    /// Number of cached centroids.
    pub h: usize,
    /// Lists probed per turn.
    pub np: usize,
    /// Refresh when `|I0| < alpha * np`; `0.0` never refreshes.
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct IvfSession<T> {
    params: IvfSessionParams,
    p: usize,
    dim: usize,
    /// Original centroid indices of the cache, in cache order.
    cached_ids: Vec<usize>,
    /// Cached centroid vectors, row-major, aligned with `cached_ids`.
    cached: Vec<T>,
    /// `top_np(anchor, C0)`, sorted ascending.
    anchor_top: Vec<usize>,
    refresh_count: usize,
}

impl<T: Scalar> IvfSession<T> {
    /// Builds the cache around `q0` without answering it. Costs `p` evaluations.
    pub fn new(
        index: &IvfIndex<T>,
        q0: &[T],
        params: IvfSessionParams,
        counter: &mut WorkCounter,
    ) -> Result<Self> {
        let p = index.p();
        if params.np == 0 || params.np > params.h || params.h > p {
            return Err(invalid(format!(
                "session parameters must satisfy 1 <= np <= h <= p (np={}, h={}, p={p})",
                params.np, params.h
            )));
        }
        if !(0.0..=1.0).contains(&params.alpha) {
            return Err(invalid(format!("alpha={} must lie in [0, 1]", params.alpha)));
        }
        let scores = index.score_centroids(q0, counter)?;
        let mut session = Self {
            params,
            p,
            dim: index.dim(),
            cached_ids: Vec::new(),
            cached: Vec::new(),
            anchor_top: Vec::new(),
            refresh_count: 0,
        };
        session.install(index, &scores);
        Ok(session)
    }

    /// Opens a session: answers `q0` with plain IVF search from the same
    /// centroid scoring pass and caches `top_h(q0, C)`.
    pub fn open(
        index: &IvfIndex<T>,
        q0: &[T],
        params: IvfSessionParams,
        k: usize,
    ) -> Result<(TurnResult<T>, Self)> {
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let mut work = IvfWork::default();
        let session = Self::new(index, q0, params, &mut work.centroid)?;
        let probe: Vec<usize> = session.cached_ids[..params.np].to_vec();
        let hits = index.scan_lists(q0, &probe, k, &mut work.scan)?;
        let turn = TurnResult {
            hits,
            refreshed: false,
            i0_size: None,
            work: work.total(),
            centroid_evaluations: work.centroid.get(),
        };
        Ok((turn, session))
    }

    /// Replaces the cache with `top_h` of the given full centroid scores.
    fn install(&mut self, index: &IvfIndex<T>, full_scores: &[T]) {
        let top_h = rank_indices(full_scores, self.params.h);
        self.cached.clear();
        for &c in &top_h {
            self.cached.extend_from_slice(index.centroids().centroid(c));
        }
        // top_h is ranked best first, so its prefix is top_np of the cache.
        let mut anchor: Vec<usize> = top_h[..self.params.np].to_vec();
        anchor.sort_unstable();
        self.anchor_top = anchor;
        self.cached_ids = top_h;
    }

    fn check_index(&self, index: &IvfIndex<T>) -> Result<()> {
        if index.p() != self.p || index.dim() != self.dim {
            return Err(Error::InvalidState(
                "session was opened on a different index".into(),
            ));
        }
        Ok(())
    }

    /// `top_np(q, C0)` as original centroid indices, best first (`h` evaluations).
    fn cached_top(&self, q: &[T], counter: &mut WorkCounter) -> Result<Vec<usize>> {
        check_query(self.dim, q)?;
        let mut scores = Vec::with_capacity(self.cached_ids.len());
        score_matrix(q, &self.cached, &mut scores);
        counter.add(self.cached_ids.len() as u64);
        // Reorder by original index so ties resolve exactly as on the full set.
        let mut order: Vec<usize> = (0..self.cached_ids.len()).collect();
        order.sort_unstable_by_key(|&i| self.cached_ids[i]);
        let by_original: Vec<T> = order.iter().map(|&i| scores[i]).collect();
        Ok(rank_indices(&by_original, self.params.np)
            .into_iter()
            .map(|pos| self.cached_ids[order[pos]])
            .collect())
    }

    fn intersection(&self, top: &[usize]) -> usize {
        top.iter()
            .filter(|c| self.anchor_top.binary_search(c).is_ok())
            .count()
    }

    /// `|top_np(qj, C0) ∩ top_np(anchor, C0)|`; costs exactly `h` evaluations.
    pub fn i0_size(&self, qj: &[T], counter: &mut WorkCounter) -> Result<usize> {
        let top = self.cached_top(qj, counter)?;
        Ok(self.intersection(&top))
    }

    /// Rebuilds the cache around `qj` (`p` evaluations) and makes it the anchor.
    pub fn refresh(&mut self, index: &IvfIndex<T>, qj: &[T], counter: &mut WorkCounter) -> Result<()> {
        self.check_index(index)?;
        let scores = index.score_centroids(qj, counter)?;
        self.install(index, &scores);
        self.refresh_count += 1;
        Ok(())
    }

    /// Answers a follow-up turn from the cache, refreshing first when the
    /// drift monitor falls below the threshold.
    pub fn search(&mut self, index: &IvfIndex<T>, qj: &[T], k: usize) -> Result<TurnResult<T>> {
        self.check_index(index)?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let mut work = IvfWork::default();
        let top = self.cached_top(qj, &mut work.centroid)?;
        let i0 = self.intersection(&top);
        let refreshed = (i0 as f64) < self.params.alpha * self.params.np as f64;
        let probe = if refreshed {
            self.refresh(index, qj, &mut work.centroid)?;
            self.cached_ids[..self.params.np].to_vec()
        } else {
            top
        };
        let hits = index.scan_lists(qj, &probe, k, &mut work.scan)?;
        Ok(TurnResult {
            hits,
            refreshed,
            i0_size: Some(i0),
            work: work.total(),
            centroid_evaluations: work.centroid.get(),
        })
    }

    /// Offline diagnostic `|top_np(q, C0) ∩ top_np(q, C)|`. Scores the full
    /// centroid set, so it is never used on the search path.
    pub fn true_intersection_size(&self, index: &IvfIndex<T>, q: &[T]) -> Result<usize> {
        self.check_index(index)?;
        let mut scratch = WorkCounter::new();
        let cached = self.cached_top(q, &mut scratch)?;
        let mut full = index.rank_centroids(q, self.params.np, &mut scratch)?;
        full.sort_unstable();
        Ok(cached.iter().filter(|c| full.binary_search(c).is_ok()).count())
    }

    pub fn params(&self) -> IvfSessionParams {
        self.params
    }

    /// Original centroid indices of `C0`, ranked for the current anchor.
    pub fn cached_indices(&self) -> &[usize] {
        &self.cached_ids
    }

    pub fn cached_centroid(&self, slot: usize) -> (usize, &[T]) {
        (
            self.cached_ids[slot],
            &self.cached[slot * self.dim..(slot + 1) * self.dim],
        )
    }

    /// `top_np(anchor, C0)`, ascending.
    pub fn anchor_top(&self) -> &[usize] {
        &self.anchor_top
    }

    pub fn refresh_count(&self) -> usize {
        self.refresh_count
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HnswSessionParams {
    pub ef: usize,
    /// Upscaling of `ef` for the opening turn, `>= 1`.
    pub up: f64,
}

impl HnswSessionParams {
    /// Candidate capacity used for the opening turn, `ceil(up * ef)`.
    pub fn opening_ef(&self) -> usize {
        (self.up * self.ef as f64).ceil() as usize
    }
}

#[derive(Clone, Debug, Default)]
pub struct HnswSession {
    entry: Option<DocId>,
    up: f64,
}

impl HnswSession {
    /// Answers `q0` with plain HNSW search at `ceil(up * ef)` and keeps its
    /// top-1 as the conversation's entry point.
    pub fn open<T: Scalar>(
        graph: &HnswGraph<T>,
        q0: &[T],
        params: HnswSessionParams,
        k: usize,
    ) -> Result<(TurnResult<T>, Self)> {
        if !params.up.is_finite() || params.up < 1.0 {
            return Err(invalid(format!("up={} must be >= 1", params.up)));
        }
        if params.ef == 0 {
            return Err(invalid("ef must be at least 1"));
        }
        let mut work = WorkCounter::new();
        let hits = graph.search(q0, k, SearchParams::new(params.opening_ef()), &mut work)?;
        let entry = hits
            .first()
            .map(|h| h.id)
            .ok_or_else(|| Error::Internal("opening search returned no hits".into()))?;
        let turn = TurnResult {
            hits,
            refreshed: false,
            i0_size: None,
            work,
            centroid_evaluations: 0,
        };
        Ok((
            turn,
            Self {
                entry: Some(entry),
                up: params.up,
            },
        ))
    }

    /// Follow-up turn: layer-0 search seeded with the privileged entry.
    pub fn search<T: Scalar>(
        &self,
        graph: &HnswGraph<T>,
        qj: &[T],
        ef: usize,
        k: usize,
    ) -> Result<TurnResult<T>> {
        let entry = self
            .entry
            .ok_or_else(|| Error::InvalidState("HNSW session has not been opened".into()))?;
        let mut work = WorkCounter::new();
        let hits = graph.search_from(qj, k, SearchParams::new(ef), entry, &mut work)?;
        Ok(TurnResult {
            hits,
            refreshed: false,
            i0_size: None,
            work,
            centroid_evaluations: 0,
        })
    }

    pub fn entry(&self) -> Option<DocId> {
        self.entry
    }

    pub fn up(&self) -> f64 {
        self.up
    }

    pub fn is_open(&self) -> bool {
        self.entry.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hnsw::HnswParams;
    use crate::vector::VectorStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn normalized_store(n: usize, d: usize, seed: u64) -> Arc<VectorStore<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Arc::new(VectorStore::from_matrix(d, data).unwrap().normalize_l2().unwrap())
    }

    fn random_query(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn index(p: usize) -> IvfIndex<f32> {
        IvfIndex::build(normalized_store(3000, 12, 1), p, 8, 2).unwrap()
    }

    fn params(h: usize, np: usize, alpha: f64) -> IvfSessionParams {
        IvfSessionParams { h, np, alpha }
    }

    #[test]
    fn full_cache_covers_all_centroids() {
        let idx = index(64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q0 = random_query(&mut rng, 12);
        let (_, s) = IvfSession::open(&idx, &q0, params(64, 4, 0.0), 10).unwrap();
        let mut cached = s.cached_indices().to_vec();
        cached.sort_unstable();
        assert_eq!(cached, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn cache_equal_to_probe_set() {
        let idx = index(64);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q0 = random_query(&mut rng, 12);
        let (_, s) = IvfSession::open(&idx, &q0, params(8, 8, 0.0), 10).unwrap();
        let mut cached = s.cached_indices().to_vec();
        cached.sort_unstable();
        assert_eq!(s.anchor_top(), &cached[..]);
    }

    #[test]
    fn cache_matches_centroid_argsort_oracle() {
        let idx = index(64);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q0 = random_query(&mut rng, 12);
        let (_, s) = IvfSession::open(&idx, &q0, params(8, 2, 0.0), 10).unwrap();
        let mut scored: Vec<(f32, usize)> = (0..64)
            .map(|i| {
                let c = idx.centroids().centroid(i);
                let mut acc = 0.0f32;
                for j in 0..12 {
                    acc += q0[j] * c[j];
                }
                (acc, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = scored[..8].iter().map(|x| x.1).collect();
        assert_eq!(s.cached_indices(), &want[..]);
    }

    #[test]
    fn opening_turn_is_plain_ivf_with_full_scoring() {
        let idx = index(32);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q0 = random_query(&mut rng, 12);
        let (turn, _) = IvfSession::open(&idx, &q0, params(8, 3, 0.0), 10).unwrap();
        let mut work = IvfWork::default();
        let plain = idx.search(&q0, 10, 3, &mut work).unwrap();
        assert_eq!(turn.hits, plain);
        assert_eq!(turn.centroid_evaluations, 32);
        assert_eq!(turn.work, work.total());
        assert_eq!(turn.i0_size, None);
    }

    #[test]
    fn anchor_gives_full_intersection() {
        let idx = index(64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for np in [1, 3, 8] {
            let q0 = random_query(&mut rng, 12);
            let (_, s) = IvfSession::open(&idx, &q0, params(16, np, 0.5), 5).unwrap();
            let mut c = WorkCounter::new();
            assert_eq!(s.i0_size(&q0, &mut c).unwrap(), np);
            assert_eq!(c.get(), 16);
        }
    }

    #[test]
    fn orthogonal_query_gives_empty_intersection() {
        // Centroids 0..3 along e0 with decreasing weight, 4..7 along e1;
        // the anchor prefers 0..3, a query along e1 prefers 4..7.
        let d = 4;
        let mut rows = Vec::new();
        for i in 0..8 {
            let mut v = vec![0.0f32; d];
            let w = 1.0 - 0.1 * (i % 4) as f32;
            if i < 4 {
                v[0] = w;
            } else {
                v[1] = w;
            }
            rows.push((format!("c{i}"), v));
        }
        let store = Arc::new(VectorStore::from_rows(d, rows).unwrap());
        let idx = IvfIndex::build(store, 8, 5, 0).unwrap();
        let anchor = vec![1.0f32, 0.0, 0.0, 0.0];
        let (_, s) = IvfSession::open(&idx, &anchor, params(8, 4, 0.0), 1).unwrap();
        let mut c = WorkCounter::new();
        assert_eq!(s.i0_size(&[0.0, 1.0, 0.0, 0.0], &mut c).unwrap(), 0);
    }

    #[test]
    fn alpha_zero_never_refreshes_and_full_cache_matches_plain() {
        let idx = index(32);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q0 = random_query(&mut rng, 12);
        let (_, mut s) = IvfSession::open(&idx, &q0, params(32, 4, 0.0), 10).unwrap();
        for _ in 0..20 {
            let q = random_query(&mut rng, 12);
            let turn = s.search(&idx, &q, 10).unwrap();
            let mut work = IvfWork::default();
            assert_eq!(turn.hits, idx.search(&q, 10, 4, &mut work).unwrap());
            assert!(!turn.refreshed);
            assert_eq!(turn.centroid_evaluations, 32);
        }
        assert_eq!(s.refresh_count(), 0);
    }

    #[test]
    fn refresh_with_opening_query_restores_cache() {
        let idx = index(64);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q0 = random_query(&mut rng, 12);
        let (_, mut s) = IvfSession::open(&idx, &q0, params(8, 3, 0.2), 10).unwrap();
        let opening = s.cached_indices().to_vec();
        let other = random_query(&mut rng, 12);
        let mut c = WorkCounter::new();
        s.refresh(&idx, &other, &mut c).unwrap();
        assert_eq!(c.get(), 64);
        assert_eq!(s.i0_size(&other, &mut c).unwrap(), 3);
        s.refresh(&idx, &q0, &mut c).unwrap();
        assert_eq!(s.cached_indices(), &opening[..]);
        assert_eq!(s.refresh_count(), 2);
    }

    #[test]
    fn refresh_turn_answers_like_plain_ivf() {
        let idx = index(64);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q0 = random_query(&mut rng, 12);
        let (_, mut s) = IvfSession::open(&idx, &q0, params(8, 4, 1.0), 10).unwrap();
        let neg: Vec<f32> = q0.iter().map(|v| -v).collect();
        let turn = s.search(&idx, &neg, 10).unwrap();
        assert!(turn.refreshed);
        assert_eq!(turn.centroid_evaluations, 8 + 64);
        let mut work = IvfWork::default();
        assert_eq!(turn.hits, idx.search(&neg, 10, 4, &mut work).unwrap());
    }

    #[test]
    fn rejects_invalid_parameters() {
        let idx = index(16);
        let q = vec![0.1f32; 12];
        assert!(IvfSession::open(&idx, &q, params(4, 5, 0.0), 1).is_err());
        assert!(IvfSession::open(&idx, &q, params(17, 2, 0.0), 1).is_err());
        assert!(IvfSession::open(&idx, &q, params(4, 2, 1.5), 1).is_err());
        assert!(IvfSession::open(&idx, &[0.1f32; 3], params(4, 2, 0.0), 1).is_err());
    }

    #[test]
    fn hnsw_session_opening_and_follow_up() {
        let store = normalized_store(1000, 12, 11);
        let g = HnswGraph::build(store, HnswParams { m: 12, ef_construction: 100, seed: 1 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q0 = random_query(&mut rng, 12);

        let (plain_turn, _) = HnswSession::open(&g, &q0, HnswSessionParams { ef: 32, up: 1.0 }, 10).unwrap();
        let mut c = WorkCounter::new();
        assert_eq!(plain_turn.hits, g.search(&q0, 10, SearchParams::new(32), &mut c).unwrap());
        assert_eq!(plain_turn.work, c);

        let params = HnswSessionParams { ef: 32, up: 2.0 };
        assert_eq!(params.opening_ef(), 64);
        let (turn, s) = HnswSession::open(&g, &q0, params, 10).unwrap();
        assert_eq!(s.entry(), Some(turn.hits[0].id));
        let again = s.search(&g, &q0, 32, 10).unwrap();
        assert_eq!(again.hits[0].id, s.entry().unwrap());
    }

    #[test]
    fn unopened_hnsw_session_is_an_error() {
        let store = normalized_store(50, 4, 13);
        let g = HnswGraph::build(store, HnswParams::default()).unwrap();
        let s = HnswSession::default();
        assert!(matches!(s.search(&g, &[1.0f32, 0.0, 0.0, 0.0], 8, 1), Err(Error::InvalidState(_))));
        assert!(HnswSession::open(&g, &[1.0f32, 0.0, 0.0, 0.0], HnswSessionParams { ef: 8, up: 0.5 }, 1).is_err());
    }
}
