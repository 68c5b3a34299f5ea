//! Re-ranking of candidate pools and the ranking metrics MRR and MAP.
//!
//! Reciprocal rank is uncut. Average precision divides by the number of all
//! judged-relevant passages of a query, retrieved or not. Queries without any
//! relevant passage are left out of the means and listed in the report.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CacheRecord, CacheStore, CandidatePool, Qrels, RankedRun};
use crate::{Error, Result};

/// Every `(qid, pid)` of `pools` absent from `cache`, in pool order.
pub fn missing_pairs(pools: &CandidatePool, cache: &CacheStore) -> Vec<(String, String)> {
    pools
        .iter()
        .flat_map(|(qid, pids)| pids.iter().map(move |pid| (qid, pid)))
        .filter(|(qid, pid)| cache.get(qid, pid).is_none())
        .map(|(qid, pid)| (qid.to_owned(), pid.clone()))
        .collect()
}

/// Fails with [`Error::CacheMiss`] on the first pool entry without a cached
/// representation.
pub fn check_coverage(pools: &CandidatePool, cache: &CacheStore) -> Result<()> {
    for (qid, pids) in pools.iter() {
        for pid in pids {
            cache.require(qid, pid)?;
        }
    }
    Ok(())
}

/// Scores every pool entry with `score` and sorts each query's candidates.
/// Scoring runs in parallel; the result does not depend on the thread count.
pub fn rerank<F>(pools: &CandidatePool, cache: &CacheStore, score: F) -> Result<RankedRun>
where
    F: Fn(&CacheRecord) -> Result<f64> + Sync,
{
    check_coverage(pools, cache)?;
    let pairs: Vec<(&str, &str)> = pools
        .iter()
        .flat_map(|(qid, pids)| pids.iter().map(move |pid| (qid, pid.as_str())))
        .collect();
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|&(qid, pid)| score(cache.require(qid, pid)?))
        .collect::<Result<_>>()?;
    let mut run = RankedRun::new();
    let mut offset = 0;
    for (qid, pids) in pools.iter() {
        let scored = pids
            .iter()
            .zip(&scores[offset..offset + pids.len()])
            .map(|(pid, &s)| (pid.clone(), s))
            .collect();
        offset += pids.len();
        run.insert(qid, scored)?;
    }
    Ok(run)
}

/// `1 / rank` of the first relevant passage, 0 when none is retrieved.
pub fn reciprocal_rank<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<&str>) -> f64 {
    ranking
        .iter()
        .position(|pid| relevant.contains(pid.as_ref()))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Average precision normalised by `|relevant|`; `None` when the query has
/// no relevant passage.
pub fn average_precision<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<&str>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, pid) in ranking.iter().enumerate() {
        if relevant.contains(pid.as_ref()) {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub reciprocal_rank: f64,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub mrr: f64,
    pub map: f64,
    /// Queries contributing to the means.
    pub evaluated: usize,
    /// Judged queries of the run without any relevant passage.
    pub excluded_no_relevant: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// `MAP <value>` and `MRR <value>` lines.
    pub fn summary(&self) -> String {
        format!(
            "MAP {:.4}\nMRR {:.4}\nevaluated {}\nexcluded_no_relevant {}\n",
            self.map,
            self.mrr,
            self.evaluated,
            self.excluded_no_relevant.len()
        )
    }
}

/// MRR and MAP of `run` against `qrels`. Every run query must have at least
/// one judgment; otherwise [`Error::Unjudged`] lists the offenders.
pub fn evaluate(run: &RankedRun, qrels: &Qrels) -> Result<MetricReport> {
    let unjudged: Vec<String> = run
        .iter()
        .map(|(qid, _)| qid)
        .filter(|qid| !qrels.has_judgments(qid))
        .map(str::to_owned)
        .collect();
    if !unjudged.is_empty() {
        return Err(Error::Unjudged(unjudged));
    }
    let mut per_query = BTreeMap::new();
    let mut excluded = Vec::new();
    for (qid, ranking) in run.iter() {
        let relevant = qrels.relevant(qid);
        let pids: Vec<&str> = ranking.iter().map(|(pid, _)| pid.as_str()).collect();
        match average_precision(&pids, &relevant) {
            Some(ap) => {
                per_query.insert(
                    qid.to_owned(),
                    QueryMetrics {
                        reciprocal_rank: reciprocal_rank(&pids, &relevant),
                        average_precision: ap,
                    },
                );
            }
            None => excluded.push(qid.to_owned()),
        }
    }
    let n = per_query.len();
    let mean = |f: fn(&QueryMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_query.values().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(MetricReport {
        mrr: mean(|m| m.reciprocal_rank),
        map: mean(|m| m.average_precision),
        evaluated: n,
        excluded_no_relevant: excluded,
        per_query,
    })
}
