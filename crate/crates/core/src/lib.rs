//! Dense retrieval over IVF and HNSW indexes with per-conversation state.
//!
//! Every index is generic over the coordinate type ([`Scalar`], implemented
//! for `f32` and `f64`). The aliases below fix the common choices.

pub mod cli;
pub mod clustering;
pub mod engine;
pub mod error;
pub mod eval;
pub mod hnsw;
pub mod io;
pub mod ivf;
mod scalar;
pub mod session;
pub mod vector;

pub use clustering::{assign_lists, train_kmeans, CentroidSet, PostingLists};
pub use engine::{Backend, Engine, Mode, SearchSettings, TurnOutcome, TurnTelemetry};
pub use error::{Error, Result};
pub use eval::{evaluate_run, Gain, MetricsReport, Qrels, RankedRun, TopicMetrics};
pub use hnsw::{HnswGraph, HnswParams, SearchParams};
pub use io::{Conversation, SyntheticSpec, Turn};
pub use ivf::{IvfIndex, IvfWork};
pub use scalar::Scalar;
pub use session::{HnswSession, HnswSessionParams, IvfSession, IvfSessionParams, TurnResult};
pub use vector::{dot, similarity, top_k, DocId, ScoredHit, VectorStore, WorkCounter};

pub type VectorStoreF32 = VectorStore<f32>;
pub type VectorStoreF64 = VectorStore<f64>;
pub type IvfIndexF32 = IvfIndex<f32>;
pub type IvfIndexF64 = IvfIndex<f64>;
pub type HnswGraphF32 = HnswGraph<f32>;
pub type HnswGraphF64 = HnswGraph<f64>;
pub type IvfSessionF32 = IvfSession<f32>;
pub type IvfSessionF64 = IvfSession<f64>;
pub type EngineF32 = Engine<f32>;
