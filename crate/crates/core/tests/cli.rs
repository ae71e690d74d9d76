use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn toploc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toploc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = toploc(args);
    assert!(
        out.status.success(),
        "toploc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn synth(extra: &[&str]) -> Self {
        Self::synth_seeded("3", extra)
    }

    fn synth_seeded(seed: &str, extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        let mut args = vec![
            "gen-synth", "--out-dir", &out, "--n", "3000", "--d", "16", "--clusters", "24", "--conversations", "8",
            "--turns", "6", "--seed", seed,
        ];
        args.extend_from_slice(extra);
        ok(&args);
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn build_ivf(&self, p: usize) -> String {
        let out = self.path(&format!("p{p}.ivf"));
        ok(&["build", "ivf", "--vectors", &self.path("docs.tlvec"), "--out", &out, "--p", &p.to_string(), "--seed", "1"]);
        out
    }

    fn build_hnsw(&self) -> String {
        let out = self.path("g.hnsw");
        ok(&["build", "hnsw", "--vectors", &self.path("docs.tlvec"), "--out", &out, "--m", "8", "--ef-construction", "64"]);
        out
    }

    fn data_args(&self, index: &str) -> Vec<String> {
        vec![
            "--index".into(),
            index.into(),
            "--vectors".into(),
            self.path("docs.tlvec"),
            "--queries".into(),
            self.path("queries.tlvec"),
            "--conversations".into(),
            self.path("conversations.tsv"),
            "--qrels".into(),
            self.path("qrels.txt"),
        ]
    }

    /// Returns the parsed report and the run file text.
    fn run(&self, name: &str, index: &str, extra: &[&str]) -> (serde_json::Value, String) {
        let (run, report) = (self.path(&format!("{name}.run")), self.path(&format!("{name}.json")));
        let mut args: Vec<String> = vec!["run".into()];
        args.extend(self.data_args(index));
        args.extend(extra.iter().map(|s| s.to_string()));
        args.extend(["--run-out".into(), run.clone(), "--report-out".into(), report.clone()]);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        let json = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
        (json, std::fs::read_to_string(run).unwrap())
    }
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn gen_synth_is_deterministic() {
    let a = Workspace::synth(&[]);
    let b = Workspace::synth(&[]);
    for f in ["docs.tlvec", "queries.tlvec", "conversations.tsv", "qrels.txt"] {
        assert_eq!(read(a.path(f)), read(b.path(f)), "{f} differs between identical invocations");
    }
    let c = Workspace::synth_seeded("4", &[]);
    assert_ne!(read(a.path("docs.tlvec")), read(c.path("docs.tlvec")));
}

#[test]
fn gen_synth_rejects_bad_shift_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    let o = toploc(&["gen-synth", "--out-dir", out.to_str().unwrap(), "--turns", "4", "--shift-at", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("docs.tlvec").exists());
}

#[test]
fn build_with_more_centroids_than_rows_fails_without_output() {
    let w = Workspace::synth(&[]);
    let out = w.path("big.ivf");
    let o = toploc(&["build", "ivf", "--vectors", &w.path("docs.tlvec"), "--out", &out, "--p", "5000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!PathBuf::from(out).exists());
}

#[test]
fn exact_run_reproduces_exact_qrels() {
    let w = Workspace::synth(&[]);
    let index = w.build_ivf(16);
    let (report, run) = w.run("exact", &index, &["--mode", "exact"]);
    assert_eq!(report["method"], "exact");
    assert_eq!(report["mean"]["mrr@10"], 1.0);
    assert_eq!(report["mean"]["ndcg@10"], 1.0);
    assert_eq!(run.lines().count(), 8 * 6 * 10);
    let first = run.lines().next().unwrap();
    let fields: Vec<&str> = first.split_whitespace().collect();
    assert_eq!(fields.len(), 6);
    assert_eq!((fields[0], fields[1], fields[3], fields[5]), ("c000_0", "Q0", "1", "exact"));
}

#[test]
fn full_probe_ivf_run_matches_exact() {
    let w = Workspace::synth(&[]);
    let index = w.build_ivf(16);
    let (_, exact) = w.run("exact", &index, &["--mode", "exact", "--tag", "same"]);
    let (report, ivf) = w.run("ivf", &index, &["--mode", "ivf", "--np", "16", "--tag", "same"]);
    assert_eq!(exact, ivf);
    let telemetry = report["telemetry"].as_array().unwrap();
    assert_eq!(telemetry.len(), 48);
    assert!(telemetry.iter().all(|t| t["centroid_evaluations"] == 16));
}

#[test]
fn report_carries_speedup_and_refresh_summary() {
    let w = Workspace::synth(&["--shift-at", "3"]);
    let index = w.build_ivf(48);
    let (report, _) = w.run(
        "plus",
        &index,
        &["--mode", "toploc-ivf-plus", "--np", "2", "--h", "8", "--alpha", "0.5", "--baseline", "ivf"],
    );
    assert_eq!(report["speedup_vs"]["baseline"], "ivf");
    assert!(report["speedup_vs"]["ratios"]["toploc-ivf-plus"].as_f64().unwrap() > 0.0);
    assert!(report["summary"]["refresh_count"].as_u64().unwrap() >= 1);
    let turns = report["telemetry"].as_array().unwrap();
    for t in turns.iter().filter(|t| t["turn"] != "0") {
        let c = t["centroid_evaluations"].as_u64().unwrap();
        if t["refreshed"] == true {
            assert_eq!(c, 8 + 48);
        } else {
            assert_eq!(c, 8);
        }
    }
    assert_eq!(report["timing"]["methods"].as_array().unwrap().len(), 2);
}

#[test]
fn toploc_hnsw_opening_ef_is_scaled() {
    let w = Workspace::synth(&[]);
    let index = w.build_hnsw();
    let (report, _) = w.run("th", &index, &["--mode", "toploc-hnsw", "--ef", "20", "--up", "2"]);
    assert_eq!(report["summary"]["opening_ef"], 40);
    assert_eq!(report["summary"]["followup_ef"], 20);
}

#[test]
fn config_file_supplies_settings_and_flags_override() {
    let w = Workspace::synth(&[]);
    let index = w.build_ivf(16);
    let cfg = w.path("run.toml");
    std::fs::write(&cfg, "mode = \"toploc-ivf\"\nnp = 2\nh = 8\n").unwrap();
    let (report, _) = w.run("cfg", &index, &["--config", &cfg, "--np", "3"]);
    assert_eq!(report["method"], "toploc-ivf");
    assert_eq!(report["config"]["np"], 3);
    assert_eq!(report["config"]["h"], 8);
}

#[test]
fn invalid_parameter_combination_is_a_usage_error() {
    let w = Workspace::synth(&[]);
    let index = w.build_ivf(16);
    let mut args: Vec<String> = vec!["run".into(), "--mode".into(), "toploc-ivf".into()];
    args.extend(w.data_args(&index));
    args.extend(["--np", "9", "--h", "4", "--run-out"].iter().map(|s| s.to_string()));
    args.extend([w.path("x.run"), "--report-out".into(), w.path("x.json")]);
    let o = toploc(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&w.path("x.run")).exists());
}

#[test]
fn evaluate_reports_missing_topics() {
    let w = Workspace::synth(&[]);
    let index = w.build_ivf(16);
    let (_, run) = w.run("exact", &index, &["--mode", "exact"]);
    let half: String = run.lines().filter(|l| l.starts_with("c000_") || l.starts_with("c001_")).map(|l| format!("{l}\n")).collect();
    let partial = w.path("partial.run");
    std::fs::write(&partial, half).unwrap();
    let out = toploc(&["evaluate", "--run", &partial, "--qrels", &w.path("qrels.txt")]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["missing_topics"].as_array().unwrap().len(), 36);
    assert_eq!(report["per_topic"].as_object().unwrap().len(), 48);
    assert!((report["mean"]["mrr@10"].as_f64().unwrap() - 12.0 / 48.0).abs() < 1e-9);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let w = Workspace::synth(&[]);
    let index = w.build_ivf(32);
    let csv = w.path("sweep.csv");
    let mut args: Vec<String> = vec!["sweep".into(), "--mode".into(), "ivf".into()];
    args.extend(w.data_args(&index));
    args.extend(["--param", "np", "--values", "1,2,4,8,32,64", "--csv-out"].iter().map(|s| s.to_string()));
    args.push(csv.clone());
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "param,value,mean_time_ms,similarity_evaluations_per_turn,mrr@10,ndcg@3,ndcg@10"
    );
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    // np=64 exceeds p and is skipped
    assert_eq!(rows.len(), 5);
    let ndcg: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(ndcg.windows(2).all(|w| w[1] >= w[0] - 0.01), "{ndcg:?}");
    assert_eq!(ndcg[4], 1.0);
    let work: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(work.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn corrupt_index_is_rejected() {
    let w = Workspace::synth(&[]);
    let index = w.build_ivf(16);
    let mut bytes = read(&index);
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&index, bytes).unwrap();
    let mut args: Vec<String> = vec!["run".into(), "--mode".into(), "ivf".into(), "--np".into(), "2".into()];
    args.extend(w.data_args(&index));
    args.extend(["--run-out".into(), w.path("r.run"), "--report-out".into(), w.path("r.json")]);
    let o = toploc(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed file at byte"));
}
