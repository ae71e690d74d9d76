//! TREC qrels: whitespace-separated `topic iteration docid grade`.

use std::path::Path;

use log::warn;

use super::atomic_write;
use crate::error::{Error, Result};
use crate::eval::Qrels;

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let text = std::fs::read_to_string(path)?;
    let fail = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut qrels = Qrels::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(fail(line, format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| fail(line, format!("grade '{}' is not an integer", fields[3])))?;
        if grade < 0 {
            return Err(fail(line, format!("negative grade {grade}")));
        }
        let grade = u32::try_from(grade).map_err(|_| fail(line, format!("grade {grade} is too large")))?;
        if grade > 2 {
            warn!("{}:{line}: grade {grade} outside {{0,1,2}}", path.display());
        }
        let (topic, doc) = (fields[0], fields[2]);
        if let Some(old) = qrels.insert(topic, doc, grade) {
            warn!(
                "{}:{line}: ({topic}, {doc}) judged again, grade {old} replaced by {grade}",
                path.display()
            );
        }
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        for (topic, judged) in qrels.topics() {
            for (doc, grade) in judged {
                writeln!(w, "{topic} 0 {doc} {grade}")?;
            }
        }
        Ok(())
    })
}
