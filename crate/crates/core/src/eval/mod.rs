//! Retrieval effectiveness metrics over graded relevance judgments.

pub mod timing;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use timing::{time_conversations, ExecutionPolicy, MethodTiming, SpeedupTable, TimingReport};

/// Relevance judgments: topic → document → grade.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    topics: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a grade, returning the one it replaced.
    pub fn insert(&mut self, topic: impl Into<String>, doc: impl Into<String>, grade: u32) -> Option<u32> {
        self.topics
            .entry(topic.into())
            .or_default()
            .insert(doc.into(), grade)
    }

    pub fn grade(&self, topic: &str, doc: &str) -> Option<u32> {
        self.topics.get(topic)?.get(doc).copied()
    }

    pub fn topic(&self, topic: &str) -> Option<&BTreeMap<String, u32>> {
        self.topics.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.topics.iter().map(|(t, m)| (t.as_str(), m))
    }

    /// Number of (topic, document) judgments.
    pub fn len(&self) -> usize {
        self.topics.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-topic rankings, best first and free of duplicate documents.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedRun {
    topics: BTreeMap<String, Vec<(String, f64)>>,
}

impl RankedRun {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a topic ranking, sorted by descending score with lower document
    /// id first on ties.
    pub fn insert(&mut self, topic: impl Into<String>, mut ranking: Vec<(String, f64)>) -> Result<()> {
        let topic = topic.into();
        if let Some((doc, _)) = ranking.iter().find(|(_, s)| !s.is_finite()) {
            return Err(invalid(format!("topic {topic}: non-finite score for {doc}")));
        }
        ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        self.insert_ordered(topic, ranking)
    }

    /// Stores a ranking as given. Scores must be finite and non-increasing.
    pub fn insert_ordered(&mut self, topic: impl Into<String>, ranking: Vec<(String, f64)>) -> Result<()> {
        let topic = topic.into();
        if let Some((doc, _)) = ranking.iter().find(|(_, s)| !s.is_finite()) {
            return Err(invalid(format!("topic {topic}: non-finite score for {doc}")));
        }
        if let Some(w) = ranking.windows(2).find(|w| w[1].1 > w[0].1) {
            return Err(invalid(format!(
                "topic {topic}: {} ranked below {} with a higher score",
                w[1].0, w[0].0
            )));
        }
        let mut docs: Vec<&str> = ranking.iter().map(|(d, _)| d.as_str()).collect();
        docs.sort_unstable();
        if let Some(w) = docs.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("topic {topic}: duplicate document {}", w[0])));
        }
        self.topics.insert(topic, ranking);
        Ok(())
    }

    pub fn topic(&self, topic: &str) -> Option<&[(String, f64)]> {
        self.topics.get(topic).map(Vec::as_slice)
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.topics.iter().map(|(t, r)| (t.as_str(), r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

/// How a relevance grade turns into gain for DCG.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Gain {
    /// gain = grade (trec_eval ndcg_cut)
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

/// Reciprocal rank of the first document with grade >= 1 within `cutoff`.
pub fn mrr_at<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, cutoff: usize) -> f64 {
    ranking
        .iter()
        .take(cutoff)
        .position(|d| judged.get(d.as_ref()).is_some_and(|&g| g >= 1))
        .map_or(0.0, |rank| 1.0 / (rank + 1) as f64)
}

/// DCG@cutoff / IDCG@cutoff with discount `1 / log2(rank + 1)`; 0 when the
/// topic has no positively graded document.
pub fn ndcg_at<S: AsRef<str>>(
    ranking: &[S],
    judged: &BTreeMap<String, u32>,
    cutoff: usize,
    gain: Gain,
) -> f64 {
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(r, d)| gain.apply(judged.get(d.as_ref()).copied().unwrap_or(0)) * discount(r))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(r, &g)| gain.apply(g) * discount(r))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    #[serde(rename = "mrr@10")]
    pub mrr_10: f64,
    #[serde(rename = "ndcg@3")]
    pub ndcg_3: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg_10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_topic: BTreeMap<String, TopicMetrics>,
    pub mean: TopicMetrics,
    pub topics: usize,
    /// Evaluated topics with no ranking in the run, scored 0.
    pub missing_topics: Vec<String>,
}

/// Evaluates every qrels topic that has at least one positive grade. Topics
/// the run does not cover score 0 and are listed in `missing_topics`.
pub fn evaluate_run(run: &RankedRun, qrels: &Qrels, gain: Gain) -> Result<MetricsReport> {
    let mut per_topic = BTreeMap::new();
    let mut missing = Vec::new();
    for (topic, judged) in qrels.topics() {
        if !judged.values().any(|&g| g > 0) {
            continue;
        }
        let docs: Vec<&str> = match run.topic(topic) {
            Some(r) => r.iter().map(|(d, _)| d.as_str()).collect(),
            None => {
                missing.push(topic.to_string());
                Vec::new()
            }
        };
        per_topic.insert(
            topic.to_string(),
            TopicMetrics {
                mrr_10: mrr_at(&docs, judged, 10),
                ndcg_3: ndcg_at(&docs, judged, 3, gain),
                ndcg_10: ndcg_at(&docs, judged, 10, gain),
            },
        );
    }
    if per_topic.is_empty() {
        return Err(Error::EmptyReport("qrels contain no topic with a positive grade".into()));
    }
    if missing.len() == per_topic.len() {
        return Err(Error::EmptyReport("run and qrels share no topic".into()));
    }
    let n = per_topic.len() as f64;
    let mut mean = TopicMetrics::default();
    for m in per_topic.values() {
        mean.mrr_10 += m.mrr_10;
        mean.ndcg_3 += m.ndcg_3;
        mean.ndcg_10 += m.ndcg_10;
    }
    mean.mrr_10 /= n;
    mean.ndcg_3 /= n;
    mean.ndcg_10 /= n;
    Ok(MetricsReport {
        topics: per_topic.len(),
        per_topic,
        mean,
        missing_topics: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn judged(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn mrr_examples() {
        let j = judged(&[("a", 1), ("b", 2)]);
        assert_eq!(mrr_at(&["a", "x"], &j, 10), 1.0);
        assert_eq!(mrr_at(&["x", "b"], &j, 10), 0.5);
        let none: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        assert_eq!(mrr_at(&none, &j, 10), 0.0);
        assert_eq!(mrr_at(&["x", "b"], &j, 1), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let j = judged(&[("a", 2), ("b", 1), ("c", 0)]);
        assert!((ndcg_at(&["a", "b", "z"], &j, 10, Gain::Linear) - 1.0).abs() < 1e-12);
        // grades by rank [0, 2, 1], ideal [2, 1, 0]
        let got = ndcg_at(&["c", "a", "b"], &j, 3, Gain::Linear);
        let want = (2.0 / 3f64.log2() + 1.0 / 2.0) / (2.0 + 1.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.669_672).abs() < 1e-6);
        assert_eq!(ndcg_at(&["a"], &BTreeMap::new(), 10, Gain::Linear), 0.0);
    }

    #[test]
    fn exponential_gain() {
        let j = judged(&[("a", 2), ("b", 1)]);
        let got = ndcg_at(&["b", "a"], &j, 2, Gain::Exponential);
        let want = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_single_topic() {
        let mut q = Qrels::new();
        q.insert("t", "a", 2);
        q.insert("t", "b", 1);
        let mut run = RankedRun::new();
        run.insert("t", vec![("a".into(), 0.9), ("b".into(), 0.5)]).unwrap();
        let r = evaluate_run(&run, &q, Gain::Linear).unwrap();
        assert_eq!(r.mean, TopicMetrics { mrr_10: 1.0, ndcg_3: 1.0, ndcg_10: 1.0 });
    }

    #[test]
    fn mean_over_topics_and_exclusions() {
        let mut q = Qrels::new();
        q.insert("good", "a", 1);
        q.insert("bad", "b", 1);
        q.insert("unjudged", "c", 0);
        let mut run = RankedRun::new();
        run.insert("good", vec![("a".into(), 1.0)]).unwrap();
        run.insert("bad", vec![("z".into(), 1.0)]).unwrap();
        run.insert("unjudged", vec![("c".into(), 1.0)]).unwrap();
        let r = evaluate_run(&run, &q, Gain::Linear).unwrap();
        assert_eq!(r.topics, 2);
        assert!((r.mean.ndcg_10 - 0.5).abs() < 1e-12);
        assert!(!r.per_topic.contains_key("unjudged"));
    }

    #[test]
    fn missing_topics_score_zero_and_disjoint_is_error() {
        let mut q = Qrels::new();
        q.insert("t1", "a", 1);
        q.insert("t2", "b", 1);
        let mut run = RankedRun::new();
        run.insert("t1", vec![("a".into(), 1.0)]).unwrap();
        let r = evaluate_run(&run, &q, Gain::Linear).unwrap();
        assert_eq!(r.missing_topics, vec!["t2".to_string()]);
        assert!((r.mean.mrr_10 - 0.5).abs() < 1e-12);

        let mut other = RankedRun::new();
        other.insert("zz", vec![("a".into(), 1.0)]).unwrap();
        assert!(matches!(evaluate_run(&other, &q, Gain::Linear), Err(Error::EmptyReport(_))));
        assert!(evaluate_run(&run, &Qrels::new(), Gain::Linear).is_err());
    }

    #[test]
    fn run_rejects_duplicates_and_sorts_ties_by_id() {
        let mut run = RankedRun::new();
        assert!(run.insert("t", vec![("a".into(), 1.0), ("a".into(), 0.5)]).is_err());
        assert!(run.insert("t", vec![("a".into(), f64::NAN)]).is_err());
        run.insert("t", vec![("b".into(), 0.5), ("a".into(), 0.5), ("c".into(), 0.9)]).unwrap();
        let docs: Vec<&str> = run.topic("t").unwrap().iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(docs, vec!["c", "a", "b"]);
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_rank_based(grades in proptest::collection::vec(0u32..3, 1..15), scale in 0.1f64..10.0) {
            let mut q = Qrels::new();
            let mut ranking = Vec::new();
            for (i, g) in grades.iter().enumerate() {
                q.insert("t", format!("d{i:02}"), *g);
                ranking.push((format!("d{i:02}"), (grades.len() - i) as f64));
            }
            prop_assume!(grades.iter().any(|&g| g > 0));
            let mut run = RankedRun::new();
            run.insert("t", ranking.clone()).unwrap();
            let base = evaluate_run(&run, &q, Gain::Linear).unwrap();
            for v in [base.mean.mrr_10, base.mean.ndcg_3, base.mean.ndcg_10] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
            let transformed: Vec<(String, f64)> = ranking.iter().map(|(d, s)| (d.clone(), (s * scale).exp())).collect();
            let mut run2 = RankedRun::new();
            run2.insert("t", transformed).unwrap();
            prop_assert_eq!(evaluate_run(&run2, &q, Gain::Linear).unwrap().mean, base.mean);
        }
    }
}
