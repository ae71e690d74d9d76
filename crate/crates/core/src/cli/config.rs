use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use super::usage;
use crate::engine::{Mode, SearchSettings};
use crate::eval::{ExecutionPolicy, Gain};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    /// One thread, conversations in input order.
    #[default]
    Reproducible,
    /// Conversations spread over the thread pool in batches.
    Throughput,
}

/// Search options shared by `run` and `sweep`. Any of them may come from a
/// TOML file given with `--config`; flags take precedence.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SearchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Persisted IVF or HNSW index.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Document vector file the index was built over.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Query vector file referenced by the conversation file.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub conversations: Option<PathBuf>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub np: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub ef: Option<usize>,
    #[arg(long)]
    pub up: Option<f64>,
    #[arg(long, value_enum)]
    pub execution: Option<Execution>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Thread pool size in throughput mode.
    #[arg(long)]
    pub threads: Option<usize>,
    /// L2-normalize documents and queries on load.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize: Option<bool>,
    #[arg(long, value_enum)]
    pub gain: Option<Gain>,
}

impl SearchArgs {
    /// Flags over config file over defaults.
    pub fn resolve(self) -> anyhow::Result<Self> {
        let file = match &self.config {
            Some(path) => read_config(path)?,
            None => Self::default(),
        };
        let cfg = self.config.clone();
        let mut out = Self {
            config: cfg,
            mode: self.mode.or(file.mode),
            index: self.index.or(file.index),
            vectors: self.vectors.or(file.vectors),
            queries: self.queries.or(file.queries),
            conversations: self.conversations.or(file.conversations),
            qrels: self.qrels.or(file.qrels),
            k: self.k.or(file.k).or(Some(10)),
            np: self.np.or(file.np),
            h: self.h.or(file.h),
            alpha: self.alpha.or(file.alpha),
            ef: self.ef.or(file.ef),
            up: self.up.or(file.up),
            execution: self.execution.or(file.execution).or(Some(Execution::Reproducible)),
            batch_size: self.batch_size.or(file.batch_size).or(Some(1)),
            threads: self.threads.or(file.threads),
            normalize: self.normalize.or(file.normalize).or(Some(false)),
            gain: self.gain.or(file.gain).or(Some(Gain::Linear)),
        };
        if out.mode.is_none() {
            return Err(usage("--mode is required (flag or config file)"));
        }
        if out.batch_size == Some(0) {
            return Err(usage("--batch-size must be at least 1"));
        }
        if out.threads == Some(0) {
            out.threads = None;
        }
        Ok(out)
    }

    pub fn mode(&self) -> Mode {
        self.mode.expect("resolved")
    }

    pub fn settings(&self) -> SearchSettings {
        SearchSettings {
            k: self.k.unwrap_or(10),
            np: self.np,
            h: self.h,
            alpha: self.alpha,
            ef: self.ef,
            up: self.up,
        }
    }

    pub fn policy(&self) -> ExecutionPolicy {
        ExecutionPolicy {
            reproducible: self.execution != Some(Execution::Throughput),
            batch_size: self.batch_size.unwrap_or(1),
        }
    }

    pub fn required<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| usage(format!("--{flag} is required (flag or config file)")))
    }
}

fn read_config(path: &Path) -> anyhow::Result<SearchArgs> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}
