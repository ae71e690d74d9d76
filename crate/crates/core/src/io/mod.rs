//! File formats: vectors, conversations, qrels, runs, persisted indexes and
//! the synthetic workload generator.

mod binary;
pub mod conversations;
pub mod index;
pub mod qrels;
pub mod run;
pub mod synth;
pub mod vectors;

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub use conversations::{read_conversations, topic_id, write_conversations, Conversation, Turn};
pub use index::{read_hnsw, read_ivf, write_hnsw, write_ivf};
pub use qrels::{read_qrels, write_qrels};
pub use run::{read_run, write_run};
pub use synth::{gen_synthetic, SyntheticSpec, SyntheticWorkload};
pub use vectors::{read_vectors, write_vectors};

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed write never leaves a partial file behind.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut w = BufWriter::new(tmp);
    write(&mut w)?;
    let tmp = w.into_inner().map_err(|e| e.into_error())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
