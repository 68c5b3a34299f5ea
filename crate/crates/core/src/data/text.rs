//! Line-oriented text inputs: `id<TAB>text` collections, TREC qrels and
//! candidate pools.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub qid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassageRecord {
    pub pid: String,
    pub text: String,
}

/// Parses `id<TAB>text` lines. `source` only labels errors.
pub fn parse_tsv<R: BufRead>(reader: R, source: &Path) -> Result<Vec<(String, String)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let Some((id, text)) = line.split_once('\t') else {
            return Err(Error::parse(source, lineno, "expected `id<TAB>text`"));
        };
        if id.is_empty() {
            return Err(Error::parse(source, lineno, "empty id"));
        }
        if text.is_empty() {
            return Err(Error::parse(source, lineno, "empty text"));
        }
        if !seen.insert(id.to_owned()) {
            return Err(Error::parse(source, lineno, format!("duplicate id `{id}`")));
        }
        out.push((id.to_owned(), text.to_owned()));
    }
    Ok(out)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let rows = parse_tsv(BufReader::new(File::open(path)?), path)?;
    Ok(rows.into_iter().map(|(qid, text)| QueryRecord { qid, text }).collect())
}

pub fn load_passages(path: impl AsRef<Path>) -> Result<Vec<PassageRecord>> {
    let path = path.as_ref();
    let rows = parse_tsv(BufReader::new(File::open(path)?), path)?;
    Ok(rows
        .into_iter()
        .map(|(pid, text)| PassageRecord { pid, text })
        .collect())
}

/// Graded relevance judgments with a binarization threshold: a grade at or
/// above the threshold counts as relevant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
    threshold: u32,
}

impl Qrels {
    pub fn new(threshold: u32) -> Result<Self> {
        if threshold == 0 {
            return Err(Error::Config("relevance threshold must be at least 1".into()));
        }
        Ok(Self {
            judgments: BTreeMap::new(),
            threshold,
        })
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    /// Adds a judgment, returning false if `(qid, pid)` was already judged.
    pub fn insert(&mut self, qid: &str, pid: &str, grade: u32) -> bool {
        self.judgments
            .entry(qid.to_owned())
            .or_default()
            .insert(pid.to_owned(), grade)
            .is_none()
    }

    pub fn grade(&self, qid: &str, pid: &str) -> Option<u32> {
        self.judgments.get(qid)?.get(pid).copied()
    }

    /// Unjudged pairs are irrelevant.
    pub fn is_relevant(&self, qid: &str, pid: &str) -> bool {
        self.grade(qid, pid).is_some_and(|g| g >= self.threshold)
    }

    pub fn has_judgments(&self, qid: &str) -> bool {
        self.judgments.contains_key(qid)
    }

    /// All passages judged relevant for `qid`, retrieved or not.
    pub fn relevant(&self, qid: &str) -> BTreeSet<&str> {
        self.judgments.get(qid).map_or_else(BTreeSet::new, |m| {
            m.iter()
                .filter(|(_, &g)| g >= self.threshold)
                .map(|(p, _)| p.as_str())
                .collect()
        })
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }
}

/// Parses TREC qrels (`qid iteration pid grade`).
pub fn parse_qrels<R: BufRead>(reader: R, threshold: u32, source: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new(threshold)?;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _, pid, grade] = fields[..] else {
            return Err(Error::parse(source, lineno, "expected `qid 0 pid grade`"));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("grade `{grade}` is not an integer")))?;
        let grade =
            u32::try_from(grade).map_err(|_| Error::parse(source, lineno, format!("grade {grade} out of range")))?;
        if !qrels.insert(qid, pid, grade) {
            return Err(Error::parse(
                source,
                lineno,
                format!("duplicate judgment for {qid}/{pid}"),
            ));
        }
    }
    Ok(qrels)
}

pub fn load_qrels(path: impl AsRef<Path>, threshold: u32) -> Result<Qrels> {
    let path = path.as_ref();
    parse_qrels(BufReader::new(File::open(path)?), threshold, path)
}

/// First-stage candidates per query, in retrieval order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidatePool {
    pools: BTreeMap<String, Vec<String>>,
}

impl CandidatePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, pids: Vec<String>) -> Result<()> {
        let qid = qid.into();
        let mut seen = HashSet::new();
        for p in &pids {
            if !seen.insert(p.as_str()) {
                return Err(Error::Duplicate {
                    kind: "candidate",
                    id: format!("{qid}/{p}"),
                });
            }
        }
        self.pools.insert(qid, pids);
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&[String]> {
        self.pools.get(qid).map(Vec::as_slice)
    }

    /// Queries in ascending qid order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.pools.iter().map(|(q, p)| (q.as_str(), p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    pub fn pair_count(&self) -> usize {
        self.pools.values().map(Vec::len).sum()
    }

    /// Checks that every id resolves against loaded collections.
    pub fn check_resolvable(&self, queries: &[QueryRecord], passages: &[PassageRecord]) -> Result<()> {
        let qids: HashSet<&str> = queries.iter().map(|q| q.qid.as_str()).collect();
        let pids: HashSet<&str> = passages.iter().map(|p| p.pid.as_str()).collect();
        for (qid, cands) in self.iter() {
            if !qids.contains(qid) {
                return Err(Error::Config(format!(
                    "pool query `{qid}` is not in the query collection"
                )));
            }
            if let Some(p) = cands.iter().find(|p| !pids.contains(p.as_str())) {
                return Err(Error::Config(format!(
                    "pool passage `{p}` is not in the passage collection"
                )));
            }
        }
        Ok(())
    }
}

/// Parses candidate pools given either as TREC run lines
/// (`qid Q0 pid rank score tag`, ordered by rank) or `qid<TAB>pid` pairs
/// (file order).
pub fn parse_pools<R: BufRead>(reader: R, source: &Path) -> Result<CandidatePool> {
    let mut ranked: BTreeMap<String, Vec<(u64, usize, String)>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (qid, pid, rank) = match fields[..] {
            [] => continue,
            [qid, pid] => (qid, pid, u64::MAX),
            [qid, "Q0", pid, rank, _score, _tag] => {
                let rank = rank
                    .parse()
                    .map_err(|_| Error::parse(source, lineno, format!("rank `{rank}` is not an integer")))?;
                (qid, pid, rank)
            }
            _ => {
                return Err(Error::parse(
                    source,
                    lineno,
                    "expected `qid<TAB>pid` or `qid Q0 pid rank score tag`",
                ))
            }
        };
        if !seen.insert((qid.to_owned(), pid.to_owned())) {
            return Err(Error::parse(source, lineno, format!("duplicate candidate {qid}/{pid}")));
        }
        ranked
            .entry(qid.to_owned())
            .or_default()
            .push((rank, lineno, pid.to_owned()));
    }
    let mut pool = CandidatePool::new();
    for (qid, mut entries) in ranked {
        entries.sort_by_key(|&(rank, line, _)| (rank, line));
        pool.insert(qid, entries.into_iter().map(|(_, _, p)| p).collect())?;
    }
    Ok(pool)
}

pub fn load_pools(path: impl AsRef<Path>) -> Result<CandidatePool> {
    let path = path.as_ref();
    parse_pools(BufReader::new(File::open(path)?), path)
}
