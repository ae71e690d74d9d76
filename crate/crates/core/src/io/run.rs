//! TREC run files: `topic Q0 docid rank score tag`.

use std::collections::BTreeMap;
use std::path::Path;

use super::atomic_write;
use crate::error::{Error, Result};
use crate::eval::RankedRun;

/// Ranks start at 1; scores use 6-decimal fixed point.
pub fn write_run(run: &RankedRun, tag: &str, path: &Path) -> Result<()> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(crate::error::invalid(format!("run tag '{tag}' must be one non-empty word")));
    }
    atomic_write(path, |w| {
        for (topic, ranking) in run.topics() {
            for (rank, (doc, score)) in ranking.iter().enumerate() {
                writeln!(w, "{topic} Q0 {doc} {} {score:.6} {tag}", rank + 1)?;
            }
        }
        Ok(())
    })
}

/// Reads a run, ordering each topic by its rank column.
pub fn read_run(path: &Path) -> Result<RankedRun> {
    let text = std::fs::read_to_string(path)?;
    let fail = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut topics: BTreeMap<String, Vec<(u64, String, f64, usize)>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(fail(line, format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: u64 = fields[3]
            .parse()
            .map_err(|_| fail(line, format!("rank '{}' is not an integer", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| fail(line, format!("score '{}' is not a finite number", fields[4])))?;
        topics
            .entry(fields[0].to_string())
            .or_default()
            .push((rank, fields[2].to_string(), score, line));
    }
    let mut run = RankedRun::new();
    for (topic, mut rows) in topics {
        rows.sort_by_key(|r| r.0);
        let line = rows.last().map_or(0, |r| r.3);
        let ranking = rows.into_iter().map(|(_, d, s, _)| (d, s)).collect();
        run.insert_ordered(topic.as_str(), ranking)
            .map_err(|e| fail(line, e.to_string()))?;
    }
    Ok(run)
}
