//! Deterministic clustered corpora with topically local conversations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conversations::{topic_id, Conversation, Turn};
use crate::error::{invalid, Result};
use crate::eval::Qrels;
use crate::vector::{dot, VectorStore, WorkCounter};

/// Grade given to each turn's exact top-k.
pub const SYNTHETIC_GRADE: u32 = 2;
pub const SYNTHETIC_QRELS_DEPTH: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub clusters: usize,
    /// Expected norm of the noise added to a unit cluster centre.
    pub sigma: f64,
    pub conversations: usize,
    pub turns_per_conversation: usize,
    /// Weight of the fresh in-cluster point mixed into each follow-up query.
    pub drift: f64,
    /// 0-based turn index at which a conversation jumps to the cluster
    /// farthest from its anchor.
    pub shift_at: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 100_000,
            d: 128,
            clusters: 256,
            sigma: 0.6,
            conversations: 50,
            turns_per_conversation: 8,
            drift: 0.1,
            shift_at: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.clusters == 0 || self.conversations == 0 || self.turns_per_conversation == 0
        {
            return Err(invalid("n, d, clusters, conversations and turns must all be positive"));
        }
        if self.clusters > self.n {
            return Err(invalid(format!("clusters={} exceeds n={}", self.clusters, self.n)));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return Err(invalid(format!("drift={} must lie in [0, 1]", self.drift)));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(invalid(format!("sigma={} must be finite and non-negative", self.sigma)));
        }
        if let Some(s) = self.shift_at {
            if s == 0 || s >= self.turns_per_conversation {
                return Err(invalid(format!(
                    "shift_at={s} must lie in 1..{}",
                    self.turns_per_conversation
                )));
            }
            if self.clusters < 2 {
                return Err(invalid("shift_at needs at least 2 clusters"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorkload {
    pub docs: VectorStore<f32>,
    /// One row per turn, keyed by the turn's embedding id.
    pub queries: VectorStore<f32>,
    pub conversations: Vec<Conversation<f32>>,
    pub qrels: Qrels,
    /// Unit cluster centres, row-major `clusters x d`.
    pub centres: Vec<f32>,
    pub doc_clusters: Vec<usize>,
    /// Cluster each turn was drawn from, per conversation.
    pub turn_clusters: Vec<Vec<usize>>,
}

fn normalize(v: &mut [f32]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f32) -> impl Iterator<Item = f32> + '_ {
    (0..d).map(move |_| scale * rng.sample::<f32, _>(StandardNormal))
}

fn cluster_point(rng: &mut ChaCha8Rng, centre: &[f32], scale: f32) -> Vec<f32> {
    let mut v: Vec<f32> = centre.iter().zip(gaussian(rng, centre.len(), scale)).map(|(c, e)| c + e).collect();
    normalize(&mut v);
    v
}

/// Generates the corpus, the conversations and their qrels. The corpus and the
/// conversations draw from separate streams, so conversation settings never
/// change the corpus.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticWorkload> {
    spec.validate()?;
    let d = spec.d;
    let scale = (spec.sigma / (d as f64).sqrt()) as f32;
    let mut corpus_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut conv_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    conv_rng.set_stream(1);

    let mut centres = Vec::with_capacity(spec.clusters * d);
    for _ in 0..spec.clusters {
        let mut c: Vec<f32> = gaussian(&mut corpus_rng, d, 1.0).collect();
        normalize(&mut c);
        centres.extend(c);
    }
    let centre = |c: usize| &centres[c * d..(c + 1) * d];

    let mut data = Vec::with_capacity(spec.n * d);
    let mut doc_clusters = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.clusters;
        data.extend(cluster_point(&mut corpus_rng, centre(c), scale));
        doc_clusters.push(c);
    }
    let doc_ids = (0..spec.n).map(|i| format!("d{i:07}")).collect();
    let docs = VectorStore::new(d, data, doc_ids)?;

    let mut conversations = Vec::with_capacity(spec.conversations);
    let mut turn_clusters = Vec::with_capacity(spec.conversations);
    let mut query_rows = Vec::new();
    let width = (spec.conversations - 1).to_string().len().max(3);
    for ci in 0..spec.conversations {
        let id = format!("c{ci:0width$}");
        let anchor = conv_rng.random_range(0..spec.clusters);
        let mut cluster = anchor;
        let mut q = cluster_point(&mut conv_rng, centre(cluster), scale);
        let mut turns = Vec::with_capacity(spec.turns_per_conversation);
        let mut clusters = Vec::with_capacity(spec.turns_per_conversation);
        for t in 0..spec.turns_per_conversation {
            if t > 0 {
                if spec.shift_at == Some(t) {
                    cluster = (0..spec.clusters)
                        .min_by(|&a, &b| {
                            dot(centre(anchor), centre(a)).total_cmp(&dot(centre(anchor), centre(b)))
                        })
                        .expect("clusters >= 2");
                    q = cluster_point(&mut conv_rng, centre(cluster), scale);
                } else if spec.drift > 0.0 {
                    let fresh = cluster_point(&mut conv_rng, centre(cluster), scale);
                    let w = spec.drift as f32;
                    q = q.iter().zip(&fresh).map(|(a, b)| (1.0 - w) * a + w * b).collect();
                    normalize(&mut q);
                }
            }
            let turn_id = t.to_string();
            let embedding_id = topic_id(&id, &turn_id);
            query_rows.push((embedding_id.clone(), q.clone()));
            turns.push(Turn {
                id: turn_id,
                embedding_id,
                query: q.clone(),
            });
            clusters.push(cluster);
        }
        conversations.push(Conversation { id, turns });
        turn_clusters.push(clusters);
    }
    let queries = VectorStore::from_rows(d, query_rows)?;

    let judged: Vec<(String, Vec<String>)> = queries
        .rows()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(qid, q)| {
            let mut c = WorkCounter::new();
            let hits = docs.exact_top_k(q, SYNTHETIC_QRELS_DEPTH, &mut c)?;
            Ok((
                queries.id(qid).to_string(),
                hits.iter().map(|h| docs.id(h.id).to_string()).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut qrels = Qrels::new();
    for (topic, hits) in judged {
        for doc in hits {
            qrels.insert(topic.as_str(), doc, SYNTHETIC_GRADE);
        }
    }

    Ok(SyntheticWorkload {
        docs,
        queries,
        conversations,
        qrels,
        centres,
        doc_clusters,
        turn_clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate_run, Gain, RankedRun};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n: 2000,
            d: 16,
            clusters: 20,
            sigma: 0.5,
            conversations: 6,
            turns_per_conversation: 6,
            drift: 0.1,
            shift_at: None,
            seed: 9,
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = gen_synthetic(&small()).unwrap();
        let b = gen_synthetic(&small()).unwrap();
        assert_eq!(a.docs, b.docs);
        assert_eq!(a.conversations, b.conversations);
        assert_eq!(a.qrels, b.qrels);
    }

    #[test]
    fn zero_drift_repeats_the_query() {
        let w = gen_synthetic(&SyntheticSpec { drift: 0.0, ..small() }).unwrap();
        for c in &w.conversations {
            assert!(c.turns.iter().all(|t| t.query == c.turns[0].query));
        }
    }

    #[test]
    fn shift_moves_to_another_cluster() {
        let spec = SyntheticSpec { shift_at: Some(4), ..small() };
        let w = gen_synthetic(&spec).unwrap();
        let nearest = |q: &[f32]| {
            (0..spec.clusters)
                .max_by(|&a, &b| {
                    dot(q, &w.centres[a * 16..(a + 1) * 16]).total_cmp(&dot(q, &w.centres[b * 16..(b + 1) * 16]))
                })
                .unwrap()
        };
        for (c, clusters) in w.conversations.iter().zip(&w.turn_clusters) {
            assert_ne!(nearest(&c.turns[3].query), nearest(&c.turns[4].query));
            assert_ne!(clusters[3], clusters[4]);
            assert!(clusters[4..].iter().all(|&x| x == clusters[4]));
        }
        let no_shift = gen_synthetic(&small()).unwrap();
        assert_eq!(no_shift.docs, w.docs);
    }

    #[test]
    fn exact_run_is_perfect_on_its_qrels() {
        let w = gen_synthetic(&small()).unwrap();
        let mut run = RankedRun::new();
        for (qid, q) in w.queries.rows() {
            let mut c = WorkCounter::new();
            let hits = w.docs.exact_top_k(q, 10, &mut c).unwrap();
            let ranking = hits.iter().map(|h| (w.docs.id(h.id).to_string(), h.score as f64)).collect();
            run.insert(w.queries.id(qid), ranking).unwrap();
        }
        let report = evaluate_run(&run, &w.qrels, Gain::Linear).unwrap();
        assert_eq!(report.topics, 36);
        assert_eq!(report.mean.mrr_10, 1.0);
        assert!((report.mean.ndcg_10 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(gen_synthetic(&SyntheticSpec { clusters: 3000, ..small() }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { drift: 1.5, ..small() }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { shift_at: Some(6), ..small() }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { conversations: 0, ..small() }).is_err());
    }
}
