//! Search modes wired to indexes and sessions, one conversation at a time.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hnsw::{HnswGraph, SearchParams};
use crate::io::Conversation;
use crate::ivf::{IvfIndex, IvfWork};
use crate::session::{HnswSession, HnswSessionParams, IvfSession, IvfSessionParams, TurnResult};
use crate::vector::{ScoredHit, VectorStore, WorkCounter};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    Ivf,
    ToplocIvf,
    ToplocIvfPlus,
    Hnsw,
    ToplocHnsw,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Ivf => "ivf",
            Mode::ToplocIvf => "toploc-ivf",
            Mode::ToplocIvfPlus => "toploc-ivf-plus",
            Mode::Hnsw => "hnsw",
            Mode::ToplocHnsw => "toploc-hnsw",
        }
    }

    pub fn uses_ivf(self) -> bool {
        matches!(self, Mode::Ivf | Mode::ToplocIvf | Mode::ToplocIvfPlus)
    }

    pub fn uses_hnsw(self) -> bool {
        matches!(self, Mode::Hnsw | Mode::ToplocHnsw)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        <Mode as clap::ValueEnum>::from_str(s, false).map_err(|_| invalid(format!("unknown mode '{s}'")))
    }
}

/// Mode parameters. Which fields are required depends on the mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub k: usize,
    pub np: Option<usize>,
    pub h: Option<usize>,
    pub alpha: Option<f64>,
    pub ef: Option<usize>,
    pub up: Option<f64>,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            k: 10,
            np: None,
            h: None,
            alpha: None,
            ef: None,
            up: None,
        }
    }
}

impl SearchSettings {
    /// Checks that `mode` has every parameter it needs, in range. Bounds that
    /// depend on the index (`np <= p`, `h <= p`) are checked by [`Engine::new`].
    pub fn check(&self, mode: Mode) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        match mode {
            Mode::Exact => {}
            Mode::Ivf => {
                require(self.np, "np", mode)?;
            }
            Mode::ToplocIvf | Mode::ToplocIvfPlus => {
                let np = require(self.np, "np", mode)?;
                let h = require(self.h, "h", mode)?;
                if np == 0 || h < np {
                    return Err(invalid(format!("np={np} and h={h} must satisfy 1 <= np <= h")));
                }
                if mode == Mode::ToplocIvfPlus {
                    let alpha = require(self.alpha, "alpha", mode)?;
                    if !(0.0..=1.0).contains(&alpha) {
                        return Err(invalid(format!("alpha={alpha} must lie in [0, 1]")));
                    }
                }
            }
            Mode::Hnsw | Mode::ToplocHnsw => {
                let ef = require(self.ef, "ef", mode)?;
                if ef < self.k {
                    return Err(invalid(format!("ef={ef} must be at least k={}", self.k)));
                }
                if mode == Mode::ToplocHnsw {
                    let up = require(self.up, "up", mode)?;
                    if !up.is_finite() || up < 1.0 {
                        return Err(invalid(format!("up={up} must be >= 1")));
                    }
                }
            }
        }
        Ok(())
    }
}

pub enum Backend<T> {
    Flat(Arc<VectorStore<T>>),
    Ivf(Arc<IvfIndex<T>>),
    Hnsw(Arc<HnswGraph<T>>),
}

impl<T: Scalar> Backend<T> {
    pub fn store(&self) -> &Arc<VectorStore<T>> {
        match self {
            Backend::Flat(s) => s,
            Backend::Ivf(i) => i.store(),
            Backend::Hnsw(g) => g.store(),
        }
    }
}

impl<T> Clone for Backend<T> {
    fn clone(&self) -> Self {
        match self {
            Backend::Flat(s) => Backend::Flat(s.clone()),
            Backend::Ivf(i) => Backend::Ivf(i.clone()),
            Backend::Hnsw(g) => Backend::Hnsw(g.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Plan {
    Exact,
    Ivf { np: usize },
    ToplocIvf(IvfSessionParams),
    Hnsw { ef: usize },
    ToplocHnsw(HnswSessionParams),
}

/// Per-turn telemetry recorded in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnTelemetry {
    pub conversation: String,
    pub turn: String,
    /// Wall-clock time of the search call alone.
    pub micros: f64,
    pub similarity_evaluations: u64,
    pub centroid_evaluations: u64,
    /// `|I0|`, or -1 when not applicable (opening turn, non-TopLoc-IVF modes).
    pub i0: i64,
    pub refreshed: bool,
    pub ef_search: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TurnOutcome<T> {
    pub hits: Vec<ScoredHit<T>>,
    pub telemetry: TurnTelemetry,
}

pub struct Engine<T> {
    mode: Mode,
    k: usize,
    plan: Plan,
    backend: Backend<T>,
}

fn require<V: Copy>(value: Option<V>, name: &str, mode: Mode) -> Result<V> {
    value.ok_or_else(|| invalid(format!("mode {mode} requires --{name}")))
}

impl<T: Scalar> Engine<T> {
    /// Validates mode-specific parameters against the backend before any work.
    pub fn new(mode: Mode, settings: &SearchSettings, backend: Backend<T>) -> Result<Self> {
        settings.check(mode)?;
        let k = settings.k;
        let p = match &backend {
            Backend::Ivf(i) => Some(i.p()),
            _ => None,
        };
        if mode.uses_ivf() && p.is_none() {
            return Err(invalid(format!("mode {mode} needs an IVF index")));
        }
        if mode.uses_hnsw() && !matches!(backend, Backend::Hnsw(_)) {
            return Err(invalid(format!("mode {mode} needs an HNSW index")));
        }
        let check_np = |np: usize| -> Result<usize> {
            let p = p.unwrap_or(usize::MAX);
            if np == 0 || np > p {
                return Err(invalid(format!("np={np} must satisfy 1 <= np <= p={p}")));
            }
            Ok(np)
        };
        let plan = match mode {
            Mode::Exact => Plan::Exact,
            Mode::Ivf => Plan::Ivf {
                np: check_np(require(settings.np, "np", mode)?)?,
            },
            Mode::ToplocIvf | Mode::ToplocIvfPlus => {
                let np = check_np(require(settings.np, "np", mode)?)?;
                let h = require(settings.h, "h", mode)?;
                if h < np || h > p.unwrap_or(0) {
                    return Err(invalid(format!(
                        "h={h} must satisfy np={np} <= h <= p={}",
                        p.unwrap_or(0)
                    )));
                }
                let alpha = if mode == Mode::ToplocIvfPlus {
                    let alpha = require(settings.alpha, "alpha", mode)?;
                    if !(0.0..=1.0).contains(&alpha) {
                        return Err(invalid(format!("alpha={alpha} must lie in [0, 1]")));
                    }
                    alpha
                } else {
                    0.0
                };
                Plan::ToplocIvf(IvfSessionParams { h, np, alpha })
            }
            Mode::Hnsw => {
                let ef = require(settings.ef, "ef", mode)?;
                if ef < k {
                    return Err(invalid(format!("ef={ef} must be at least k={k}")));
                }
                Plan::Hnsw { ef }
            }
            Mode::ToplocHnsw => {
                let ef = require(settings.ef, "ef", mode)?;
                let up = require(settings.up, "up", mode)?;
                if ef < k {
                    return Err(invalid(format!("ef={ef} must be at least k={k}")));
                }
                if !up.is_finite() || up < 1.0 {
                    return Err(invalid(format!("up={up} must be >= 1")));
                }
                Plan::ToplocHnsw(HnswSessionParams { ef, up })
            }
        };
        Ok(Self {
            mode,
            k,
            plan,
            backend,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn store(&self) -> &Arc<VectorStore<T>> {
        self.backend.store()
    }

    /// Runs the turns of one conversation in order, timing each search call.
    pub fn run_conversation(&self, conversation: &Conversation<T>) -> Result<Vec<TurnOutcome<T>>> {
        let mut outcomes = Vec::with_capacity(conversation.turns.len());
        let mut ivf_session: Option<IvfSession<T>> = None;
        let mut hnsw_session: Option<HnswSession> = None;

        for turn in &conversation.turns {
            let q = turn.query.as_slice();
            let started = Instant::now();
            let (result, ef_search) = match (&self.plan, &self.backend) {
                (Plan::Exact, backend) => {
                    let mut work = WorkCounter::new();
                    let hits = backend.store().exact_top_k(q, self.k, &mut work)?;
                    (plain(hits, work, 0), None)
                }
                (Plan::Ivf { np }, Backend::Ivf(index)) => {
                    let mut work = IvfWork::default();
                    let hits = index.search(q, self.k, *np, &mut work)?;
                    (plain(hits, work.total(), work.centroid.get()), None)
                }
                (Plan::ToplocIvf(params), Backend::Ivf(index)) => {
                    let result = match ivf_session.as_mut() {
                        Some(session) => session.search(index, q, self.k)?,
                        None => {
                            let (result, session) = IvfSession::open(index, q, *params, self.k)?;
                            ivf_session = Some(session);
                            result
                        }
                    };
                    (result, None)
                }
                (Plan::Hnsw { ef }, Backend::Hnsw(graph)) => {
                    let mut work = WorkCounter::new();
                    let hits = graph.search(q, self.k, SearchParams::new(*ef), &mut work)?;
                    (plain(hits, work, 0), Some(*ef))
                }
                (Plan::ToplocHnsw(params), Backend::Hnsw(graph)) => match hnsw_session.as_ref() {
                    Some(session) => (session.search(graph, q, params.ef, self.k)?, Some(params.ef)),
                    None => {
                        let (result, session) = HnswSession::open(graph, q, *params, self.k)?;
                        hnsw_session = Some(session);
                        (result, Some(params.opening_ef()))
                    }
                },
                _ => unreachable!("plan and backend are matched in Engine::new"),
            };
            let micros = started.elapsed().as_secs_f64() * 1e6;
            outcomes.push(TurnOutcome {
                telemetry: TurnTelemetry {
                    conversation: conversation.id.clone(),
                    turn: turn.id.clone(),
                    micros,
                    similarity_evaluations: result.work.get(),
                    centroid_evaluations: result.centroid_evaluations,
                    i0: result.i0_size.map_or(-1, |v| v as i64),
                    refreshed: result.refreshed,
                    ef_search,
                },
                hits: result.hits,
            });
        }
        Ok(outcomes)
    }
}

fn plain<T>(hits: Vec<ScoredHit<T>>, work: WorkCounter, centroid_evaluations: u64) -> TurnResult<T> {
    TurnResult {
        hits,
        refreshed: false,
        i0_size: None,
        work,
        centroid_evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hnsw::HnswParams;
    use crate::io::Turn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(n: usize, d: usize) -> Arc<VectorStore<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let data = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Arc::new(VectorStore::from_matrix(d, data).unwrap().normalize_l2().unwrap())
    }

    fn conversation(d: usize, turns: usize) -> Conversation<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        Conversation {
            id: "c1".into(),
            turns: (0..turns)
                .map(|t| Turn {
                    id: t.to_string(),
                    embedding_id: format!("c1_{t}"),
                    query: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect(),
        }
    }

    fn settings() -> SearchSettings {
        SearchSettings {
            k: 5,
            np: Some(2),
            h: Some(4),
            alpha: Some(0.5),
            ef: Some(16),
            up: Some(2.0),
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Exact, Mode::Ivf, Mode::ToplocIvf, Mode::ToplocIvfPlus, Mode::Hnsw, Mode::ToplocHnsw] {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("nope".parse::<Mode>().is_err());
    }

    #[test]
    fn mode_specific_parameters_are_required() {
        let s = store(200, 6);
        let ivf = Arc::new(IvfIndex::build(s.clone(), 8, 5, 0).unwrap());
        let mut missing = settings();
        missing.h = None;
        assert!(Engine::new(Mode::ToplocIvf, &missing, Backend::Ivf(ivf.clone())).is_err());
        let mut no_alpha = settings();
        no_alpha.alpha = None;
        assert!(Engine::new(Mode::ToplocIvf, &no_alpha, Backend::Ivf(ivf.clone())).is_ok());
        assert!(Engine::new(Mode::ToplocIvfPlus, &no_alpha, Backend::Ivf(ivf.clone())).is_err());
        assert!(Engine::new(Mode::Hnsw, &settings(), Backend::Ivf(ivf.clone())).is_err());
        let mut big_np = settings();
        big_np.np = Some(9);
        assert!(Engine::new(Mode::Ivf, &big_np, Backend::Ivf(ivf)).is_err());
        let mut low_up = settings();
        low_up.up = Some(0.5);
        let g = Arc::new(HnswGraph::build(s.clone(), HnswParams::default()).unwrap());
        assert!(Engine::new(Mode::ToplocHnsw, &low_up, Backend::Hnsw(g.clone())).is_err());
        assert!(Engine::new(Mode::Exact, &settings(), Backend::Hnsw(g)).is_ok());
    }

    #[test]
    fn toploc_hnsw_records_upscaled_opening_ef() {
        let s = store(300, 6);
        let g = Arc::new(HnswGraph::build(s, HnswParams::default()).unwrap());
        let e = Engine::new(Mode::ToplocHnsw, &settings(), Backend::Hnsw(g)).unwrap();
        let out = e.run_conversation(&conversation(6, 4)).unwrap();
        let efs: Vec<Option<usize>> = out.iter().map(|o| o.telemetry.ef_search).collect();
        assert_eq!(efs, vec![Some(32), Some(16), Some(16), Some(16)]);
    }

    #[test]
    fn toploc_ivf_telemetry() {
        let s = store(400, 6);
        let ivf = Arc::new(IvfIndex::build(s, 8, 5, 0).unwrap());
        let e = Engine::new(Mode::ToplocIvfPlus, &settings(), Backend::Ivf(ivf)).unwrap();
        let out = e.run_conversation(&conversation(6, 5)).unwrap();
        assert_eq!(out[0].telemetry.i0, -1);
        assert_eq!(out[0].telemetry.centroid_evaluations, 8);
        for o in &out[1..] {
            assert!((0..=2).contains(&o.telemetry.i0));
            let want = if o.telemetry.refreshed { 4 + 8 } else { 4 };
            assert_eq!(o.telemetry.centroid_evaluations, want);
        }
    }

    #[test]
    fn full_probe_ivf_equals_exact() {
        let s = store(500, 6);
        let ivf = Arc::new(IvfIndex::build(s, 8, 5, 0).unwrap());
        let mut full = settings();
        full.np = Some(8);
        let a = Engine::new(Mode::Ivf, &full, Backend::Ivf(ivf.clone())).unwrap();
        let b = Engine::new(Mode::Exact, &full, Backend::Ivf(ivf)).unwrap();
        let conv = conversation(6, 6);
        let ha: Vec<_> = a.run_conversation(&conv).unwrap().into_iter().map(|o| o.hits).collect();
        let hb: Vec<_> = b.run_conversation(&conv).unwrap().into_iter().map(|o| o.hits).collect();
        assert_eq!(ha, hb);
    }
}
