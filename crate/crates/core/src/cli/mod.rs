//! `toploc` command line: build, run, sweep, evaluate, gen-synth.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Execution, SearchArgs};

#[derive(Parser, Debug)]
#[command(name = "toploc", version, about = "Conversational dense retrieval over IVF and HNSW indexes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build and persist an IVF or HNSW index over a vector file.
    Build(BuildArgs),
    /// Answer every conversation turn, writing a TREC run and a JSON report.
    Run(RunArgs),
    /// Vary one parameter and tabulate latency, work and effectiveness.
    Sweep(SweepArgs),
    /// Score a TREC run against qrels.
    Evaluate(EvaluateArgs),
    /// Write a synthetic corpus, queries, conversations and qrels.
    GenSynth(GenSynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum IndexKind {
    Ivf,
    Hnsw,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(value_enum)]
    pub kind: IndexKind,
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of IVF centroids.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = crate::clustering::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long, default_value_t = crate::hnsw::DEFAULT_M)]
    pub m: usize,
    #[arg(long, default_value_t = crate::hnsw::DEFAULT_EF_CONSTRUCTION)]
    pub ef_construction: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// L2-normalize the vectors before building.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub run_out: PathBuf,
    #[arg(long)]
    pub report_out: PathBuf,
    /// Run tag written in the last column; defaults to the mode name.
    #[arg(long)]
    pub tag: Option<String>,
    /// Also time this mode with the same settings and report speedups against it.
    #[arg(long, value_enum)]
    pub baseline: Option<crate::engine::Mode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Np,
    H,
    Alpha,
    Ef,
    Up,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated ascending values.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub csv_out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, value_enum, default_value_t = crate::eval::Gain::Linear)]
    pub gain: crate::eval::Gain,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = 256)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.6)]
    pub sigma: f64,
    #[arg(long, default_value_t = 50)]
    pub conversations: usize,
    #[arg(long, default_value_t = 8)]
    pub turns: usize,
    #[arg(long, default_value_t = 0.1)]
    pub drift: f64,
    /// 0-based turn index of the topic shift.
    #[arg(long)]
    pub shift_at: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Error that maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Run(a) => commands::run(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::GenSynth(a) => commands::gen_synth(a),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
