//! Diffusion of information across contextual token vectors, measured as
//! cosine similarity between the CLS vector and the query tokens, between
//! the CLS vector and the passage tokens, and between distinct passage
//! tokens. Also exposes the attention gates of a memory network.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CacheRecord, TokenReprRecord};
use crate::model::{forward_record, Mode, ModelParams};
use crate::{Error, Result};

pub const HISTOGRAM_BINS: usize = 50;

/// Records decoded and processed together.
const BATCH: usize = 64;

fn norm(a: &[f32]) -> f64 {
    a.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "cosine",
            detail: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Streaming moments and a fixed-range histogram of similarity values.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
    histogram: [u64; HISTOGRAM_BINS],
}

impl Default for Moments {
    fn default() -> Self {
        Self {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            histogram: [0; HISTOGRAM_BINS],
        }
    }
}

fn bin_of(x: f64) -> usize {
    (((x + 1.0) / 2.0 * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        self.histogram[bin_of(x)] += 1;
    }

    /// Chan et al. pairwise combination.
    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.histogram
            .iter_mut()
            .zip(&other.histogram)
            .for_each(|(a, b)| *a += b);
    }

    fn summary(&self) -> Distribution {
        let some = self.count > 0;
        Distribution {
            count: self.count,
            mean: self.mean,
            stddev: if some {
                (self.m2 / self.count as f64).sqrt()
            } else {
                0.0
            },
            min: if some { self.min } else { 0.0 },
            max: if some { self.max } else { 0.0 },
            histogram: self.histogram.to_vec(),
        }
    }
}

/// Summary of one family of similarity values. `stddev` is the population
/// standard deviation; `histogram` has [`HISTOGRAM_BINS`] equal bins on
/// `[-1, 1]`, the last one closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: u64,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<u64>,
}

/// Mean similarities of one query-passage pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiffusion {
    pub qid: String,
    pub pid: String,
    pub cls_query: f64,
    pub cls_passage: f64,
    /// `None` for single-token passages.
    pub innerpassage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub sample_fraction: f64,
    pub seed: u64,
    pub records_seen: u64,
    pub pair_count: usize,
    pub cls_query: Distribution,
    pub cls_passage: Distribution,
    pub innerpassage: Distribution,
    /// Sorted by `(qid, pid)`.
    pub per_pair: Vec<PairDiffusion>,
}

impl DiffusionReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per histogram bin with the counts of all three families.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,cls_query,cls_passage,innerpassage\n");
        let width = 2.0 / HISTOGRAM_BINS as f64;
        for i in 0..HISTOGRAM_BINS {
            let lo = -1.0 + i as f64 * width;
            out.push_str(&format!(
                "{lo:.2},{:.2},{},{},{}\n",
                lo + width,
                self.cls_query.histogram[i],
                self.cls_passage.histogram[i],
                self.innerpassage.histogram[i]
            ));
        }
        out
    }
}

/// Whether `(qid, pid)` belongs to the sample. The decision depends only on
/// the ids and the seed, never on record order.
pub fn in_sample(qid: &str, pid: &str, fraction: f64, seed: u64) -> bool {
    if fraction >= 1.0 {
        return true;
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for id in [qid, pid] {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    let digest = h.finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) >> 11;
    (bits as f64 / (1u64 << 53) as f64) < fraction
}

struct Partial {
    pair: PairDiffusion,
    cls_query: Moments,
    cls_passage: Moments,
    innerpassage: Moments,
}

fn record_partial(rec: &TokenReprRecord) -> Result<Partial> {
    let located = |e: Error| match e {
        Error::Degenerate(m) => Error::Degenerate(format!("{}/{}: {m}", rec.qid, rec.pid)),
        e => e,
    };
    let mut cls_query = Moments::default();
    for t in rec.query_tokens.iter_rows() {
        cls_query.push(cosine(&rec.cls, t).map_err(located)?);
    }
    let mut cls_passage = Moments::default();
    for t in rec.passage_tokens.iter_rows() {
        cls_passage.push(cosine(&rec.cls, t).map_err(located)?);
    }
    let rows: Vec<&[f32]> = rec.passage_tokens.iter_rows().collect();
    let norms: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
    if norms.contains(&0.0) {
        return Err(located(Error::Degenerate("cosine of a zero vector".into())));
    }
    let mut innerpassage = Moments::default();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            innerpassage.push((dot(rows[i], rows[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0));
        }
    }
    Ok(Partial {
        pair: PairDiffusion {
            qid: rec.qid.clone(),
            pid: rec.pid.clone(),
            cls_query: cls_query.mean,
            cls_passage: cls_passage.mean,
            innerpassage: (innerpassage.count > 0).then_some(innerpassage.mean),
        },
        cls_query,
        cls_passage,
        innerpassage,
    })
}

/// Similarity statistics over the sampled records. Partial results are
/// merged in `(qid, pid)` order, so the report does not depend on the order
/// of `records`.
pub fn diffusion<I>(records: I, sample_fraction: f64, seed: u64) -> Result<DiffusionReport>
where
    I: IntoIterator<Item = Result<TokenReprRecord>>,
{
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "sample fraction {sample_fraction} outside (0, 1]"
        )));
    }
    let mut partials: BTreeMap<(String, String), Partial> = BTreeMap::new();
    let mut seen = 0u64;
    let mut batch = Vec::with_capacity(BATCH);
    let flush = |batch: &mut Vec<TokenReprRecord>, partials: &mut BTreeMap<(String, String), Partial>| {
        let done: Vec<Partial> = batch.par_iter().map(record_partial).collect::<Result<_>>()?;
        batch.clear();
        for p in done {
            let key = (p.pair.qid.clone(), p.pair.pid.clone());
            if partials.contains_key(&key) {
                return Err(Error::Duplicate {
                    kind: "query-passage pair",
                    id: format!("{}/{}", key.0, key.1),
                });
            }
            partials.insert(key, p);
        }
        Ok::<_, Error>(())
    };
    for rec in records {
        let rec = rec?;
        seen += 1;
        if in_sample(&rec.qid, &rec.pid, sample_fraction, seed) {
            batch.push(rec);
            if batch.len() == BATCH {
                flush(&mut batch, &mut partials)?;
            }
        }
    }
    flush(&mut batch, &mut partials)?;
    if partials.is_empty() {
        return Err(Error::Empty(format!(
            "no record sampled out of {seen} at fraction {sample_fraction}"
        )));
    }
    let (mut cq, mut cp, mut ip) = (Moments::default(), Moments::default(), Moments::default());
    let mut per_pair = Vec::with_capacity(partials.len());
    for p in partials.into_values() {
        cq.merge(&p.cls_query);
        cp.merge(&p.cls_passage);
        ip.merge(&p.innerpassage);
        per_pair.push(p.pair);
    }
    Ok(DiffusionReport {
        sample_fraction,
        seed,
        records_seen: seen,
        pair_count: per_pair.len(),
        cls_query: cq.summary(),
        cls_passage: cp.summary(),
        innerpassage: ip.summary(),
        per_pair,
    })
}

/// Attention gates of one inference pass, `episodes x sentences`.
pub fn gate_heatmap(model: &ModelParams, rec: &CacheRecord) -> Result<Vec<Vec<f64>>> {
    forward_record(model, rec, &mut Mode::Inference).map(|f| f.state.gates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix32;

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
    }

    fn record(pid: &str, cls: Vec<f32>, query: &[Vec<f32>], passage: &[Vec<f32>]) -> TokenReprRecord {
        TokenReprRecord {
            qid: "q".into(),
            pid: pid.into(),
            cls,
            query_tokens: Matrix32::from_rows(query).unwrap(),
            passage_tokens: Matrix32::from_rows(passage).unwrap(),
            sentence_ends: vec![passage.len() as u32],
        }
    }

    #[test]
    fn identical_tokens_give_unit_means() {
        let v = vec![0.3, -0.4, 0.5];
        let rec = record(
            "p",
            v.clone(),
            &[v.clone(), v.clone()],
            &[v.clone(), v.clone(), v.clone()],
        );
        let r = diffusion([Ok(rec)], 1.0, 0).unwrap();
        for d in [&r.cls_query, &r.cls_passage, &r.innerpassage] {
            assert!((d.mean - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.innerpassage.count, 3);
        assert_eq!(r.innerpassage.histogram[HISTOGRAM_BINS - 1], 3);
    }

    #[test]
    fn orthogonal_passage_tokens() {
        let e = |i: usize| {
            let mut v = vec![0.0f32; 4];
            v[i] = 1.0;
            v
        };
        let rec = record("p", e(0), &[e(0)], &[e(0), e(1), e(2), e(3)]);
        let r = diffusion([Ok(rec)], 1.0, 0).unwrap();
        assert_eq!(r.innerpassage.mean, 0.0);
        assert_eq!(r.innerpassage.count, 6);
    }

    #[test]
    fn empty_sample_and_bad_fraction() {
        assert!(matches!(
            diffusion(Vec::<Result<TokenReprRecord>>::new(), 0.5, 1),
            Err(Error::Empty(_))
        ));
        assert!(diffusion(Vec::<Result<TokenReprRecord>>::new(), 0.0, 1).is_err());
        assert!(diffusion(Vec::<Result<TokenReprRecord>>::new(), 1.5, 1).is_err());
    }

    #[test]
    fn sampling_is_keyed_by_ids() {
        let kept = (0..2000).filter(|i| in_sample("q", &format!("p{i}"), 0.1, 3)).count();
        assert!((150..250).contains(&kept), "kept {kept}");
        assert_eq!(in_sample("q", "p1", 0.1, 3), in_sample("q", "p1", 0.1, 3));
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..10].iter().for_each(|&x| a.push(x));
        xs[10..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count, whole.count);
        assert!((a.mean - whole.mean).abs() < 1e-12);
        assert!((a.m2 - whole.m2).abs() < 1e-10);
        assert_eq!(a.histogram, whole.histogram);
    }
}
