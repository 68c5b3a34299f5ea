//! Synthetic token-representation datasets with a planted relevance signal.
//!
//! A fixed unit direction `v` is drawn per dataset. In every passage the
//! designated signal sentence has its tokens centred on `+strength * v` for
//! relevant passages and `-strength * v` for the rest; the component of the
//! token noise mean along `v` is removed, so the pooled signal sentence
//! satisfies `v . s = +-strength` exactly (up to single-precision rounding).
//! All other sentences, the query tokens and the CLS vector are isotropic
//! Gaussian noise, independent of relevance.

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{CacheRecord, CandidatePool, Matrix32, Qrels, TokenReprRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub queries: usize,
    pub candidates: usize,
    pub relevant_per_query: usize,
    pub enc_dim: usize,
    pub query_tokens: RangeInclusive<usize>,
    pub sentences: RangeInclusive<usize>,
    pub tokens_per_sentence: RangeInclusive<usize>,
    /// Zero-based index of the sentence carrying the signal.
    pub signal_sentence: usize,
    pub signal_strength: f64,
    /// Standard deviation of the per-coordinate token noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            queries: 16,
            candidates: 20,
            relevant_per_query: 2,
            enc_dim: 16,
            query_tokens: 2..=5,
            sentences: 2..=4,
            tokens_per_sentence: 2..=6,
            signal_sentence: 1,
            signal_strength: 2.0,
            noise: 1.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.queries == 0 || self.candidates == 0 || self.enc_dim == 0 {
            return bad("queries, candidates and enc_dim must be positive");
        }
        if self.relevant_per_query > self.candidates {
            return bad("more relevant passages than candidates");
        }
        for (name, r) in [
            ("query_tokens", &self.query_tokens),
            ("sentences", &self.sentences),
            ("tokens_per_sentence", &self.tokens_per_sentence),
        ] {
            if r.is_empty() || *r.start() == 0 {
                return bad(&format!("{name} must be a non-empty range of positive counts"));
            }
        }
        if *self.sentences.start() <= self.signal_sentence {
            return bad("every passage needs the signal sentence");
        }
        if !(self.signal_strength.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return bad("strength and noise must be finite, noise non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<TokenReprRecord>,
    pub qrels: Qrels,
    pub pools: CandidatePool,
    /// The planted unit direction.
    pub direction: Vec<f32>,
    pub signal_sentence: usize,
}

impl SyntheticData {
    /// Splits the pools into the first `n` queries (in qid order) and the rest.
    pub fn split_pools(&self, n: usize) -> Result<(CandidatePool, CandidatePool)> {
        let (mut a, mut b) = (CandidatePool::new(), CandidatePool::new());
        for (i, (qid, pids)) in self.pools.iter().enumerate() {
            let target = if i < n { &mut a } else { &mut b };
            target.insert(qid, pids.to_vec())?;
        }
        Ok((a, b))
    }

    /// The planted scorer `v . s_signal`, which ranks every relevant passage
    /// above every non-relevant one.
    pub fn oracle_score(&self, rec: &CacheRecord) -> Result<f64> {
        if rec.sentence_vectors.rows() <= self.signal_sentence || rec.enc_dim() != self.direction.len() {
            return Err(Error::Config(format!(
                "record {}/{} lacks the signal sentence",
                rec.qid, rec.pid
            )));
        }
        Ok(self
            .direction
            .iter()
            .zip(rec.sentence_vectors.row(self.signal_sentence))
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum())
    }
}

fn gaussian_row(rng: &mut ChaCha8Rng, dim: usize, sd: f64) -> Vec<f64> {
    (0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_row(rng, dim, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn to_f32(rows: &[Vec<f64>]) -> Vec<f32> {
    rows.iter().flatten().map(|&v| v as f32).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.enc_dim;
    let v = unit_direction(&mut rng, dim);
    let qid_width = spec.queries.to_string().len().max(3);
    let pid_width = spec.candidates.to_string().len().max(2);

    let mut records = Vec::with_capacity(spec.queries * spec.candidates);
    let mut qrels = Qrels::new(1)?;
    let mut pools = CandidatePool::new();
    for qi in 0..spec.queries {
        let qid = format!("q{qi:0qid_width$}");
        let n_query = rng.gen_range(spec.query_tokens.clone());
        let query_rows: Vec<Vec<f64>> = (0..n_query).map(|_| gaussian_row(&mut rng, dim, spec.noise)).collect();
        let query_tokens = Matrix32::new(n_query, dim, to_f32(&query_rows))?;

        let mut relevance = vec![false; spec.candidates];
        relevance[..spec.relevant_per_query].iter_mut().for_each(|r| *r = true);
        relevance.shuffle(&mut rng);

        let mut pids = Vec::with_capacity(spec.candidates);
        for (ci, &relevant) in relevance.iter().enumerate() {
            let pid = format!("{qid}-p{ci:0pid_width$}");
            let m = rng.gen_range(spec.sentences.clone());
            let mut tokens: Vec<Vec<f64>> = Vec::new();
            let mut ends = Vec::with_capacity(m);
            for s in 0..m {
                let len = rng.gen_range(spec.tokens_per_sentence.clone());
                let mut sentence: Vec<Vec<f64>> = (0..len).map(|_| gaussian_row(&mut rng, dim, spec.noise)).collect();
                if s == spec.signal_sentence {
                    let mean: Vec<f64> = (0..dim)
                        .map(|k| sentence.iter().map(|t| t[k]).sum::<f64>() / len as f64)
                        .collect();
                    let shift = (if relevant {
                        spec.signal_strength
                    } else {
                        -spec.signal_strength
                    }) - dot(&mean, &v);
                    for t in &mut sentence {
                        t.iter_mut().zip(&v).for_each(|(x, vk)| *x += shift * vk);
                    }
                }
                tokens.extend(sentence);
                ends.push(tokens.len() as u32);
            }
            let cls = gaussian_row(&mut rng, dim, spec.noise)
                .into_iter()
                .map(|x| x as f32)
                .collect();
            let rec = TokenReprRecord {
                qid: qid.clone(),
                pid: pid.clone(),
                cls,
                query_tokens: query_tokens.clone(),
                passage_tokens: Matrix32::new(tokens.len(), dim, to_f32(&tokens))?,
                sentence_ends: ends,
            };
            rec.check().map_err(Error::Config)?;
            qrels.insert(&qid, &pid, u32::from(relevant));
            records.push(rec);
            pids.push(pid);
        }
        pools.insert(qid, pids)?;
    }
    Ok(SyntheticData {
        records,
        qrels,
        pools,
        direction: v.iter().map(|&x| x as f32).collect(),
        signal_sentence: spec.signal_sentence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_cache;
    use crate::eval::{evaluate, rerank};

    #[test]
    fn planted_scorer_is_perfect() {
        let data = generate(&SyntheticSpec::default()).unwrap();
        let cache = build_cache(16, data.records.iter().cloned().map(Ok)).unwrap();
        let run = rerank(&data.pools, &cache, |r| data.oracle_score(r)).unwrap();
        assert_eq!(evaluate(&run, &data.qrels).unwrap().map, 1.0);
    }

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec {
            queries: 3,
            candidates: 5,
            relevant_per_query: 1,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 15);
        assert_eq!(a.pools.pair_count(), 15);
        for (qid, _) in a.pools.iter() {
            assert_eq!(a.qrels.relevant(qid).len(), 1);
        }
        let (train, dev) = a.split_pools(2).unwrap();
        assert_eq!((train.len(), dev.len()), (2, 1));
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = SyntheticSpec {
            sentences: 1..=3,
            ..SyntheticSpec::default()
        };
        assert!(generate(&spec).is_err());
    }
}
