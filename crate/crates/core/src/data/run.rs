//! Ranked runs and TREC run files (`qid Q0 pid rank score tag`).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

/// Scored passages per query, each list sorted by descending score with ties
/// broken by ascending pid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedRun {
    queries: BTreeMap<String, Vec<(String, f64)>>,
}

fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl RankedRun {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the scored candidates of `qid`, sorting them into rank order.
    pub fn insert(&mut self, qid: impl Into<String>, mut scored: Vec<(String, f64)>) -> Result<()> {
        let qid = qid.into();
        let mut seen = HashSet::new();
        for (pid, score) in &scored {
            if !score.is_finite() {
                return Err(Error::Config(format!("non-finite score for {qid}/{pid}")));
            }
            if !seen.insert(pid.as_str()) {
                return Err(Error::Duplicate {
                    kind: "ranked passage",
                    id: format!("{qid}/{pid}"),
                });
            }
        }
        scored.sort_by(rank_order);
        self.queries.insert(qid, scored);
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&[(String, f64)]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    /// Queries in ascending qid order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.queries.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

pub fn write_run_to<W: Write>(mut out: W, run: &RankedRun, tag: &str) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::Config(format!("invalid run tag `{tag}`")));
    }
    for (qid, ranking) in run.iter() {
        for (rank, (pid, score)) in ranking.iter().enumerate() {
            writeln!(out, "{qid} Q0 {pid} {} {score} {tag}", rank + 1)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_run(path: impl AsRef<Path>, run: &RankedRun, tag: &str) -> Result<()> {
    write_run_to(BufWriter::new(File::create(path)?), run, tag)
}

/// Parses a TREC run. Rank columns are ignored: each query is re-sorted by
/// score, ties by pid.
pub fn parse_run<R: BufRead>(reader: R, source: &Path) -> Result<RankedRun> {
    let mut queries: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _, pid, rank, score, _tag] = fields[..] else {
            if fields.is_empty() {
                continue;
            }
            return Err(Error::parse(source, lineno, "expected `qid Q0 pid rank score tag`"));
        };
        rank.parse::<u64>()
            .map_err(|_| Error::parse(source, lineno, format!("rank `{rank}` is not an integer")))?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::parse(source, lineno, format!("bad score `{score}`")))?;
        queries.entry(qid.to_owned()).or_default().push((pid.to_owned(), score));
    }
    let mut run = RankedRun::new();
    for (qid, scored) in queries {
        run.insert(qid, scored)
            .map_err(|e| Error::parse(source, 0, e.to_string()))?;
    }
    Ok(run)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RankedRun> {
    let path = path.as_ref();
    parse_run(BufReader::new(File::open(path)?), path)
}
