//! Conversation files: UTF-8 lines `conversation_id \t turn_id \t embedding_id`.
//! Query vectors come from a separate vector file keyed by embedding id.

use std::collections::HashMap;
use std::path::Path;

use super::atomic_write;
use crate::error::{Error, Result};
use crate::vector::VectorStore;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Turn<T> {
    pub id: String,
    pub embedding_id: String,
    pub query: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation<T> {
    pub id: String,
    pub turns: Vec<Turn<T>>,
}

/// Qrels/run topic id of a turn.
pub fn topic_id(conversation: &str, turn: &str) -> String {
    format!("{conversation}_{turn}")
}

/// Conversations appear in order of first mention, turns in file order.
pub fn read_conversations<T: Scalar>(path: &Path, queries: &VectorStore<T>) -> Result<Vec<Conversation<T>>> {
    let text = std::fs::read_to_string(path)?;
    let fail = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut out: Vec<Conversation<T>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(fail(
                line,
                format!("expected 3 non-empty tab-separated fields, found {}", fields.len()),
            ));
        }
        let (conv, turn, emb) = (fields[0], fields[1], fields[2]);
        let doc = queries.doc_id(emb).ok_or_else(|| {
            fail(
                line,
                format!("conversation {conv} turn {turn}: unknown embedding id '{emb}'"),
            )
        })?;
        let slot = *index.entry(conv.to_string()).or_insert_with(|| {
            out.push(Conversation {
                id: conv.to_string(),
                turns: Vec::new(),
            });
            out.len() - 1
        });
        let c = &mut out[slot];
        if c.turns.iter().any(|t| t.id == turn) {
            return Err(fail(line, format!("conversation {conv}: duplicate turn id '{turn}'")));
        }
        c.turns.push(Turn {
            id: turn.to_string(),
            embedding_id: emb.to_string(),
            query: queries.row(doc).to_vec(),
        });
    }
    Ok(out)
}

pub fn write_conversations<T>(conversations: &[Conversation<T>], path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        for c in conversations {
            for t in &c.turns {
                writeln!(w, "{}\t{}\t{}", c.id, t.id, t.embedding_id)?;
            }
        }
        Ok(())
    })
}
