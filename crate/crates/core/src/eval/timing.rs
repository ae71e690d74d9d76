//! Per-turn latency and work accounting across a set of conversations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, TurnOutcome};
use crate::error::{invalid, Result};
use crate::io::Conversation;
use crate::Scalar;

/// How conversations are scheduled while timing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPolicy {
    /// Single-threaded, conversations and turns in input order.
    pub reproducible: bool,
    /// Conversations handed to the thread pool per batch in throughput mode.
    pub batch_size: usize,
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        Self {
            reproducible: true,
            batch_size: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub turns: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub total_ms: f64,
    pub similarity_evaluations: u64,
    pub similarity_evaluations_per_turn: f64,
    pub centroid_evaluations: u64,
    pub batch_size: usize,
    pub reproducible: bool,
    pub per_turn_us: Vec<f64>,
}

impl MethodTiming {
    pub fn from_outcomes<'a, T: 'a>(
        method: &str,
        outcomes: impl IntoIterator<Item = &'a TurnOutcome<T>>,
        policy: ExecutionPolicy,
    ) -> Self {
        let outcomes: Vec<&TurnOutcome<T>> = outcomes.into_iter().collect();
        let per_turn_us: Vec<f64> = outcomes.iter().map(|o| o.telemetry.micros).collect();
        let turns = per_turn_us.len();
        let total_us: f64 = per_turn_us.iter().sum();
        let similarity_evaluations: u64 = outcomes.iter().map(|o| o.telemetry.similarity_evaluations).sum();
        let centroid_evaluations = outcomes.iter().map(|o| o.telemetry.centroid_evaluations).sum();
        let mean = |v: f64| if turns == 0 { 0.0 } else { v / turns as f64 };
        Self {
            method: method.to_string(),
            turns,
            mean_ms: mean(total_us) / 1e3,
            median_ms: median(&per_turn_us) / 1e3,
            total_ms: total_us / 1e3,
            similarity_evaluations,
            similarity_evaluations_per_turn: mean(similarity_evaluations as f64),
            centroid_evaluations,
            batch_size: policy.batch_size,
            reproducible: policy.reproducible,
            per_turn_us,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

/// Mean-latency ratio `baseline / method` for each compared method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupTable {
    pub baseline: String,
    pub ratios: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub methods: Vec<MethodTiming>,
    pub speedup_vs: Option<SpeedupTable>,
}

impl TimingReport {
    pub fn new(methods: Vec<MethodTiming>) -> Self {
        Self {
            methods,
            speedup_vs: None,
        }
    }

    pub fn method(&self, name: &str) -> Option<&MethodTiming> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn with_baseline(mut self, baseline: &str) -> Result<Self> {
        let base = self
            .method(baseline)
            .ok_or_else(|| invalid(format!("baseline method '{baseline}' was not timed")))?
            .mean_ms;
        let ratios = self
            .methods
            .iter()
            .filter(|m| m.method != baseline)
            .map(|m| {
                let r = if m.mean_ms > 0.0 { base / m.mean_ms } else { f64::INFINITY };
                (m.method.clone(), r)
            })
            .collect();
        self.speedup_vs = Some(SpeedupTable {
            baseline: baseline.to_string(),
            ratios,
        });
        Ok(self)
    }
}

/// Runs every conversation through `engine`, returning outcomes in input
/// order plus aggregate timing. Query dimensions are checked before any work.
pub fn time_conversations<T: Scalar>(
    engine: &Engine<T>,
    conversations: &[Conversation<T>],
    policy: ExecutionPolicy,
) -> Result<(Vec<Vec<TurnOutcome<T>>>, MethodTiming)> {
    if policy.batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    let dim = engine.store().dim();
    for c in conversations {
        for t in &c.turns {
            if t.query.len() != dim {
                return Err(invalid(format!(
                    "conversation {} turn {}: query has dimension {}, index has {dim}",
                    c.id,
                    t.id,
                    t.query.len()
                )));
            }
        }
    }
    let outcomes: Vec<Vec<TurnOutcome<T>>> = if policy.reproducible {
        conversations
            .iter()
            .map(|c| engine.run_conversation(c))
            .collect::<Result<_>>()?
    } else {
        let mut all = Vec::with_capacity(conversations.len());
        for batch in conversations.chunks(policy.batch_size) {
            let done: Vec<_> = batch
                .par_iter()
                .map(|c| engine.run_conversation(c))
                .collect::<Result<_>>()?;
            all.extend(done);
        }
        all
    };
    let timing = MethodTiming::from_outcomes(engine.mode().as_str(), outcomes.iter().flatten(), policy);
    Ok((outcomes, timing))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn speedup_is_baseline_over_method() {
        let mk = |name: &str, mean_ms| MethodTiming {
            method: name.into(),
            turns: 1,
            mean_ms,
            median_ms: mean_ms,
            total_ms: mean_ms,
            similarity_evaluations: 0,
            similarity_evaluations_per_turn: 0.0,
            centroid_evaluations: 0,
            batch_size: 1,
            reproducible: true,
            per_turn_us: vec![],
        };
        let r = TimingReport::new(vec![mk("ivf", 4.0), mk("toploc-ivf", 1.0)])
            .with_baseline("ivf")
            .unwrap();
        let t = r.speedup_vs.unwrap();
        assert_eq!(t.ratios["toploc-ivf"], 4.0);
        assert!(!t.ratios.contains_key("ivf"));
        assert!(TimingReport::new(vec![]).with_baseline("ivf").is_err());
    }
}
