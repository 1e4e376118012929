//! Ranked result lists and the TREC run file format.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Results for one query, sorted by score descending with ties broken by
/// passage id ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

/// Standard result ordering: higher score first, then smaller id.
pub fn result_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Sorts `(id, score)` pairs into a list, assigning ranks 1..=len.
    pub fn from_scores(query_id: impl Into<String>, mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|a, b| result_order(a.1, &a.0, b.1, &b.0));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (passage_id, score))| RankedEntry {
                passage_id,
                score,
                rank: i + 1,
            })
            .collect();
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }

    pub fn position_of(&self, passage_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.passage_id == passage_id)
    }
}

/// Writes lists as `query_id Q0 passage_id rank score tag`.
///
/// Scores carry 17 significant digits so a file round-trip is lossless.
pub fn write_run<W: Write>(mut w: W, lists: &[RankedList], tag: &str) -> std::io::Result<()> {
    for list in lists {
        for e in &list.entries {
            writeln!(
                w,
                "{} Q0 {} {} {:.16e} {}",
                list.query_id, e.passage_id, e.rank, e.score, tag
            )?;
        }
    }
    Ok(())
}

pub fn save_run(path: impl AsRef<Path>, lists: &[RankedList], tag: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_run(&mut w, lists, tag).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a run; lists come back in first-appearance order of their query
/// ids, entries ordered by the rank column.
pub fn read_run(reader: impl BufRead, path: &Path) -> Result<Vec<RankedList>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_query: HashMap<String, Vec<RankedEntry>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 columns, found {}", fields.len())));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| err(format!("bad rank `{}`", fields[3])))?;
        if rank == 0 {
            return Err(err("rank must be 1-based".into()));
        }
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| err(format!("bad score `{}`", fields[4])))?;
        let qid = fields[0];
        let entries = by_query.entry(qid.to_string()).or_insert_with(|| {
            order.push(qid.to_string());
            Vec::new()
        });
        entries.push(RankedEntry {
            passage_id: fields[2].to_string(),
            score,
            rank,
        });
    }
    let mut lists = Vec::with_capacity(order.len());
    for qid in order {
        let mut entries = by_query.remove(&qid).unwrap_or_default();
        entries.sort_by_key(|e| e.rank);
        for (i, e) in entries.iter_mut().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("query `{qid}`: ranks are not 1..n without gaps"),
                });
            }
        }
        lists.push(RankedList {
            query_id: qid,
            entries,
        });
    }
    Ok(lists)
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_run(BufReader::new(file), path)
}
