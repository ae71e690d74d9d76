use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use log::{info, warn};
use serde::Serialize;

use super::config::SearchArgs;
use super::{usage, BuildArgs, EvaluateArgs, GenSynthArgs, IndexKind, RunArgs, SweepArgs, SweepParam};
use crate::engine::{Backend, Engine, Mode, SearchSettings, TurnOutcome, TurnTelemetry};
use crate::eval::{evaluate_run, time_conversations, Gain, MethodTiming, Qrels, RankedRun, SpeedupTable, TimingReport, TopicMetrics};
use crate::hnsw::{HnswGraph, HnswParams};
use crate::io::{self, Conversation};
use crate::ivf::IvfIndex;
use crate::vector::VectorStore;

/// Removes already written outputs unless disarmed.
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn written(&mut self, path: &Path) {
        self.0.push(path.to_path_buf());
    }

    fn commit(mut self) {
        self.0.clear();
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for p in &self.0 {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn load_store(path: &Path, normalize: bool) -> anyhow::Result<VectorStore<f32>> {
    let store: VectorStore<f32> = io::read_vectors(path)?;
    Ok(if normalize { store.normalize_l2()? } else { store })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> anyhow::Result<()> {
    io::atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::from)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(())
}

pub fn build(a: BuildArgs) -> anyhow::Result<()> {
    let store = Arc::new(load_store(&a.vectors, a.normalize)?);
    let started = Instant::now();
    match a.kind {
        IndexKind::Ivf => {
            let p = a.p.ok_or_else(|| usage("build ivf requires --p"))?;
            if p == 0 || p > store.len() {
                bail!(usage(format!("p={p} must lie in 1..={}", store.len())));
            }
            let index = IvfIndex::build(store.clone(), p, a.max_iters, a.seed)?;
            let secs = started.elapsed().as_secs_f64();
            io::write_ivf(&index, &a.out)?;
            let sizes = index.lists().sizes();
            println!(
                "ivf index: n={} d={} p={} list sizes min={} max={} empty={} build_seconds={secs:.3}",
                store.len(),
                store.dim(),
                index.p(),
                sizes.iter().min().unwrap_or(&0),
                sizes.iter().max().unwrap_or(&0),
                sizes.iter().filter(|&&s| s == 0).count(),
            );
        }
        IndexKind::Hnsw => {
            let params = HnswParams {
                m: a.m,
                ef_construction: a.ef_construction,
                seed: a.seed,
            };
            let graph = HnswGraph::build(store.clone(), params)?;
            let secs = started.elapsed().as_secs_f64();
            io::write_hnsw(&graph, &a.out)?;
            println!(
                "hnsw index: n={} d={} M={} layers={} entry={} build_seconds={secs:.3}",
                store.len(),
                store.dim(),
                graph.m(),
                graph.max_layer() + 1,
                graph.global_entry(),
            );
        }
    }
    Ok(())
}

struct Loaded {
    backend: Backend<f32>,
    conversations: Vec<Conversation<f32>>,
    qrels: Option<Qrels>,
}

fn open_backend(cfg: &SearchArgs, store: Arc<VectorStore<f32>>, modes: &[Mode]) -> anyhow::Result<Backend<f32>> {
    let ivf = modes.iter().any(|m| m.uses_ivf());
    let hnsw = modes.iter().any(|m| m.uses_hnsw());
    if ivf && hnsw {
        bail!(usage("IVF and HNSW modes cannot share one index"));
    }
    if !ivf && !hnsw {
        return Ok(Backend::Flat(store));
    }
    let path = cfg.required(&cfg.index, "index")?;
    Ok(if ivf {
        Backend::Ivf(Arc::new(io::read_ivf(path, store).with_context(|| format!("loading {}", path.display()))?))
    } else {
        Backend::Hnsw(Arc::new(io::read_hnsw(path, store).with_context(|| format!("loading {}", path.display()))?))
    })
}

fn load(cfg: &SearchArgs, modes: &[Mode]) -> anyhow::Result<Loaded> {
    let vectors = cfg.required(&cfg.vectors, "vectors")?;
    let queries = cfg.required(&cfg.queries, "queries")?;
    let conv_path = cfg.required(&cfg.conversations, "conversations")?;
    let normalize = cfg.normalize.unwrap_or(false);
    let store = Arc::new(load_store(vectors, normalize)?);
    let query_store = load_store(queries, normalize)?;
    if query_store.dim() != store.dim() {
        bail!(
            "query vectors have dimension {}, documents {}",
            query_store.dim(),
            store.dim()
        );
    }
    let conversations = io::read_conversations(conv_path, &query_store)?;
    if conversations.is_empty() {
        bail!("{} holds no conversations", conv_path.display());
    }
    let backend = open_backend(cfg, store, modes)?;
    let qrels = match &cfg.qrels {
        Some(p) => Some(io::read_qrels(p)?),
        None => None,
    };
    Ok(Loaded {
        backend,
        conversations,
        qrels,
    })
}

fn install_threads(cfg: &SearchArgs) -> anyhow::Result<Option<rayon::ThreadPool>> {
    match (cfg.policy().reproducible, cfg.threads) {
        (true, _) => Ok(None),
        (false, Some(n)) => Ok(Some(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)),
        (false, None) => Ok(None),
    }
}

fn to_run(engine_store: &VectorStore<f32>, outcomes: &[Vec<TurnOutcome<f32>>]) -> anyhow::Result<RankedRun> {
    let mut run = RankedRun::new();
    for turn in outcomes.iter().flatten() {
        let t = &turn.telemetry;
        let ranking = turn
            .hits
            .iter()
            .map(|h| (engine_store.id(h.id).to_string(), h.score as f64))
            .collect();
        run.insert(io::topic_id(&t.conversation, &t.turn), ranking)?;
    }
    Ok(run)
}

#[derive(Serialize)]
struct RunSummary {
    conversations: usize,
    turns: usize,
    refresh_count: usize,
    mean_i0: Option<f64>,
    opening_ef: Option<usize>,
    followup_ef: Option<usize>,
    mean_similarity_evaluations: f64,
    mean_centroid_evaluations: f64,
}

#[derive(Serialize)]
struct RunReport<'a> {
    method: String,
    config: &'a SearchArgs,
    tag: String,
    per_topic: Option<BTreeMap<String, TopicMetrics>>,
    mean: Option<TopicMetrics>,
    missing_topics: Vec<String>,
    timing: TimingReport,
    speedup_vs: Option<SpeedupTable>,
    summary: RunSummary,
    telemetry: Vec<TurnTelemetry>,
}

fn summarize(outcomes: &[Vec<TurnOutcome<f32>>], timing: &MethodTiming) -> RunSummary {
    let flat: Vec<&TurnTelemetry> = outcomes.iter().flatten().map(|o| &o.telemetry).collect();
    let i0: Vec<f64> = flat.iter().filter(|t| t.i0 >= 0).map(|t| t.i0 as f64).collect();
    let opening = outcomes.iter().filter_map(|c| c.first()).map(|o| o.telemetry.ef_search).next().flatten();
    let followup = outcomes.iter().filter_map(|c| c.get(1)).map(|o| o.telemetry.ef_search).next().flatten();
    let turns = flat.len().max(1) as f64;
    RunSummary {
        conversations: outcomes.len(),
        turns: flat.len(),
        refresh_count: flat.iter().filter(|t| t.refreshed).count(),
        mean_i0: (!i0.is_empty()).then(|| i0.iter().sum::<f64>() / i0.len() as f64),
        opening_ef: opening,
        followup_ef: followup,
        mean_similarity_evaluations: timing.similarity_evaluations as f64 / turns,
        mean_centroid_evaluations: timing.centroid_evaluations as f64 / turns,
    }
}

fn engine_for(mode: Mode, settings: &SearchSettings, backend: Backend<f32>) -> anyhow::Result<Engine<f32>> {
    Engine::new(mode, settings, backend).map_err(|e| usage(e.to_string()))
}

pub fn run(a: RunArgs) -> anyhow::Result<()> {
    let cfg = a.search.resolve()?;
    let mode = cfg.mode();
    let settings = cfg.settings();
    settings.check(mode).map_err(|e| usage(e.to_string()))?;
    let mut modes = vec![mode];
    if let Some(b) = a.baseline {
        settings.check(b).map_err(|e| usage(format!("baseline: {e}")))?;
        modes.push(b);
    }
    let tag = a.tag.clone().unwrap_or_else(|| mode.to_string());
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        bail!(usage(format!("run tag '{tag}' must be one non-empty word")));
    }
    let loaded = load(&cfg, &modes)?;
    let engine = engine_for(mode, &settings, loaded.backend.clone())?;
    let baseline = match a.baseline {
        Some(b) => Some(engine_for(b, &settings, loaded.backend.clone())?),
        None => None,
    };
    let policy = cfg.policy();
    let pool = install_threads(&cfg)?;
    let exec = || -> anyhow::Result<_> {
        let (outcomes, timing) = time_conversations(&engine, &loaded.conversations, policy)?;
        let base = match &baseline {
            Some(b) => Some(time_conversations(b, &loaded.conversations, policy)?.1),
            None => None,
        };
        Ok((outcomes, timing, base))
    };
    let (outcomes, timing, base) = match &pool {
        Some(pool) => pool.install(exec)?,
        None => exec()?,
    };

    let run = to_run(engine.store(), &outcomes)?;
    let metrics = match &loaded.qrels {
        Some(q) => {
            let m = evaluate_run(&run, q, cfg.gain.unwrap_or_default())?;
            if !m.missing_topics.is_empty() {
                warn!("{} qrels topics have no ranking: {}", m.missing_topics.len(), m.missing_topics.join(" "));
            }
            Some(m)
        }
        None => None,
    };
    let summary = summarize(&outcomes, &timing);
    let mut methods = vec![timing];
    let mut report_timing = if let Some(b) = base {
        let name = b.method.clone();
        methods.push(b);
        TimingReport::new(methods).with_baseline(&name)?
    } else {
        TimingReport::new(methods)
    };
    let speedup_vs = report_timing.speedup_vs.clone();
    for m in &mut report_timing.methods {
        m.per_turn_us.clear();
    }
    let (per_topic, mean, missing_topics) = match metrics {
        Some(m) => (Some(m.per_topic), Some(m.mean), m.missing_topics),
        None => (None, None, Vec::new()),
    };
    let report = RunReport {
        method: mode.to_string(),
        config: &cfg,
        tag: tag.clone(),
        per_topic,
        mean,
        missing_topics,
        timing: report_timing,
        speedup_vs,
        summary,
        telemetry: outcomes.iter().flatten().map(|o| o.telemetry.clone()).collect(),
    };

    let mut outputs = Outputs::new();
    io::write_run(&run, &tag, &a.run_out)?;
    outputs.written(&a.run_out);
    write_json(&a.report_out, &report)?;
    outputs.written(&a.report_out);
    outputs.commit();
    let t = &report.timing.methods[0];
    print!(
        "{mode}: {} turns, mean {:.3} ms, {:.1} similarity evaluations per turn",
        t.turns, t.mean_ms, t.similarity_evaluations_per_turn
    );
    match &report.mean {
        Some(m) => println!(
            ", mrr@10={:.4} ndcg@3={:.4} ndcg@10={:.4}",
            m.mrr_10, m.ndcg_3, m.ndcg_10
        ),
        None => println!(),
    }
    if let Some(s) = &report.speedup_vs {
        for (name, r) in &s.ratios {
            println!("speedup of {name} over {}: {r:.2}x", s.baseline);
        }
    }
    Ok(())
}

fn sweep_values(param: SweepParam, values: &[f64]) -> anyhow::Result<()> {
    if values.is_empty() {
        bail!(usage("--values must list at least one value"));
    }
    if let Some(w) = values.windows(2).find(|w| w[1] <= w[0]) {
        bail!(usage(format!("--values must be strictly ascending ({} then {})", w[0], w[1])));
    }
    for &v in values {
        if !v.is_finite() {
            bail!(usage(format!("value {v} is not finite")));
        }
        let ok = match param {
            SweepParam::Np | SweepParam::H | SweepParam::Ef => v >= 1.0 && v.fract() == 0.0,
            SweepParam::Alpha => (0.0..=1.0).contains(&v),
            SweepParam::Up => v >= 1.0,
        };
        if !ok {
            bail!(usage(format!("value {v} is invalid for {param:?}")));
        }
    }
    Ok(())
}

/// Settings for one sweep point, or the reason it is skipped.
fn sweep_point(
    base: &SearchSettings,
    mode: Mode,
    param: SweepParam,
    v: f64,
    p: Option<usize>,
) -> Result<SearchSettings, String> {
    let mut s = base.clone();
    match param {
        SweepParam::Np => s.np = Some(v as usize),
        SweepParam::H => s.h = Some(v as usize),
        SweepParam::Alpha => s.alpha = Some(v),
        SweepParam::Ef => s.ef = Some(v as usize),
        SweepParam::Up => s.up = Some(v),
    }
    if let Some(p) = p {
        for (name, value) in [("np", s.np), ("h", s.h)] {
            if let Some(x) = value.filter(|&x| x > p) {
                return Err(format!("{name}={x} exceeds p={p}"));
            }
        }
    }
    if matches!(mode, Mode::ToplocIvf | Mode::ToplocIvfPlus) {
        if let (Some(np), Some(h)) = (s.np, s.h) {
            if np > h {
                return Err(format!("np={np} exceeds h={h}"));
            }
        }
    }
    if let Some(ef) = s.ef.filter(|&ef| ef < s.k) {
        if mode.uses_hnsw() {
            return Err(format!("ef={ef} is below k={}", s.k));
        }
    }
    Ok(s)
}

pub fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let cfg = a.search.resolve()?;
    let mode = cfg.mode();
    sweep_values(a.param, &a.values)?;
    let relevant = match a.param {
        SweepParam::Np => mode.uses_ivf(),
        SweepParam::H => matches!(mode, Mode::ToplocIvf | Mode::ToplocIvfPlus),
        SweepParam::Alpha => mode == Mode::ToplocIvfPlus,
        SweepParam::Ef => mode.uses_hnsw(),
        SweepParam::Up => mode == Mode::ToplocHnsw,
    };
    if !relevant {
        bail!(usage(format!("mode {mode} has no parameter {:?}", a.param)));
    }
    let qrels_path = cfg.required(&cfg.qrels, "qrels")?.to_path_buf();
    let loaded = load(&cfg, &[mode])?;
    let qrels = loaded.qrels.as_ref().expect("qrels path given");
    let p = match &loaded.backend {
        Backend::Ivf(i) => Some(i.p()),
        _ => None,
    };
    let base = cfg.settings();
    let policy = cfg.policy();
    let pool = install_threads(&cfg)?;
    let mut rows = Vec::new();
    for &v in &a.values {
        let settings = match sweep_point(&base, mode, a.param, v, p) {
            Ok(s) => s,
            Err(why) => {
                warn!("skipping {:?}={v}: {why}", a.param);
                continue;
            }
        };
        let engine = engine_for(mode, &settings, loaded.backend.clone())?;
        let exec = || time_conversations(&engine, &loaded.conversations, policy);
        let (outcomes, timing) = match &pool {
            Some(pool) => pool.install(exec)?,
            None => exec()?,
        };
        let run = to_run(engine.store(), &outcomes)?;
        let m = evaluate_run(&run, qrels, cfg.gain.unwrap_or(Gain::Linear))
            .with_context(|| format!("evaluating against {}", qrels_path.display()))?;
        info!("{:?}={v}: mean {:.3} ms", a.param, timing.mean_ms);
        rows.push(format!(
            "{},{},{:.6},{:.3},{:.6},{:.6},{:.6}",
            param_name(a.param),
            fmt_value(v),
            timing.mean_ms,
            timing.similarity_evaluations_per_turn,
            m.mean.mrr_10,
            m.mean.ndcg_3,
            m.mean.ndcg_10
        ));
    }
    if rows.is_empty() {
        bail!(usage("every sweep value was skipped"));
    }
    io::atomic_write(&a.csv_out, |w| {
        writeln!(w, "param,value,mean_time_ms,similarity_evaluations_per_turn,mrr@10,ndcg@3,ndcg@10")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    println!("wrote {} rows to {}", rows.len(), a.csv_out.display());
    Ok(())
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Np => "np",
        SweepParam::H => "h",
        SweepParam::Alpha => "alpha",
        SweepParam::Ef => "ef",
        SweepParam::Up => "up",
    }
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let run = io::read_run(&a.run)?;
    let qrels = io::read_qrels(&a.qrels)?;
    let report = evaluate_run(&run, &qrels, a.gain)?;
    if !report.missing_topics.is_empty() {
        warn!(
            "{} of {} qrels topics are missing from the run and score 0: {}",
            report.missing_topics.len(),
            report.topics,
            report.missing_topics.join(" ")
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, &report)?;
    writeln!(lock)?;
    Ok(())
}

pub fn gen_synth(a: GenSynthArgs) -> anyhow::Result<()> {
    let spec = io::SyntheticSpec {
        n: a.n,
        d: a.d,
        clusters: a.clusters,
        sigma: a.sigma,
        conversations: a.conversations,
        turns_per_conversation: a.turns,
        drift: a.drift,
        shift_at: a.shift_at,
        seed: a.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let w = io::gen_synthetic(&spec)?;
    let path = |name: &str| a.out_dir.join(name);
    let mut outputs = Outputs::new();
    let docs = path("docs.tlvec");
    io::write_vectors(&w.docs, &docs)?;
    outputs.written(&docs);
    let queries = path("queries.tlvec");
    io::write_vectors(&w.queries, &queries)?;
    outputs.written(&queries);
    let convs = path("conversations.tsv");
    io::write_conversations(&w.conversations, &convs)?;
    outputs.written(&convs);
    let qrels = path("qrels.txt");
    io::write_qrels(&w.qrels, &qrels)?;
    outputs.written(&qrels);
    outputs.commit();
    println!(
        "wrote {} documents, {} conversations ({} turns) and {} judgments to {}",
        w.docs.len(),
        w.conversations.len(),
        w.queries.len(),
        w.qrels.len(),
        a.out_dir.display()
    );
    Ok(())
}
