//! Pairwise max-margin training with AdamW and linear learning-rate warmup.
//!
//! Each epoch samples `(query, positive, negative)` triples from the training
//! pools, splits them into batches, and takes one optimizer step per batch on
//! the mean hinge loss. After every epoch the model re-ranks the dev pools;
//! the epoch with the best dev MAP is kept.
//!
//! Per-pair forward and backward passes run on the rayon pool. Gradients are
//! summed in pair order, so results do not depend on the number of threads.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{build_cache, CacheStore, CandidatePool, Qrels, TokrepReader};
use crate::eval::{check_coverage, evaluate, rerank};
use crate::model::{ClsHead, Mode, ModelDims, ModelParams, Param, RankModel};
use crate::{Error, Result};

/// Hyperparameters. Defaults are the published training setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub episodes: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Training pairs drawn per query and epoch.
    pub pairs_per_query: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            lr: 3e-5,
            warmup_steps: 1000,
            batch_size: 32,
            episodes: 4,
            hidden: 256,
            dropout: 0.1,
            epochs: 10,
            seed: 42,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            pairs_per_query: 1,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} (config: {self:?})")));
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return bad("margin must be finite and non-negative");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.pairs_per_query == 0 {
            return bad("batch_size and pairs_per_query must be positive");
        }
        if self.hidden == 0 || self.episodes == 0 {
            return bad("hidden and episodes must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps must be positive");
        }
        Ok(())
    }

    pub fn dims(&self, enc_dim: usize) -> ModelDims {
        ModelDims::new(enc_dim, self.hidden, self.episodes)
    }

    /// Memory network initialised from the run seed.
    pub fn init_dmn(&self, enc_dim: usize) -> Result<ModelParams> {
        ModelParams::init(self.dims(enc_dim), &mut ChaCha8Rng::seed_from_u64(self.seed))
    }

    /// CLS-only head initialised from the run seed.
    pub fn init_cls(&self, enc_dim: usize) -> Result<ClsHead> {
        if enc_dim == 0 {
            return Err(Error::Config("enc_dim must be positive".into()));
        }
        Ok(ClsHead::init(enc_dim, &mut ChaCha8Rng::seed_from_u64(self.seed)))
    }
}

/// `max(0, margin - pos + neg)`.
pub fn pair_loss(score_pos: f64, score_neg: f64, margin: f64) -> f64 {
    (margin - score_pos + score_neg).max(0.0)
}

/// Linear warmup to `cfg.lr` over `cfg.warmup_steps`, constant afterwards.
/// Steps count from 1.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.lr;
    }
    cfg.lr * (step as f64 / cfg.warmup_steps as f64).min(1.0)
}

/// Adam with decoupled weight decay. Biases are not decayed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[&Param], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn from_config(params: &[&Param], cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Param], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adamw_step",
                detail: format!(
                    "{} params, {} gradients, optimizer state for {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    detail: format!("tensor {i}: param {} vs gradient {}", p.len(), g.len()),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = if p.is_bias { 1.0 } else { 1.0 - lr * self.weight_decay };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in p.data.iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *w = *w * decay - lr * update;
                if !w.is_finite() {
                    return Err(Error::NonFinite { op: "adamw_step" });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainPair {
    pub qid: String,
    pub pid_pos: String,
    pub pid_neg: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampledPairs {
    pub pairs: Vec<TrainPair>,
    /// Queries without a relevant or without a non-relevant candidate.
    pub skipped_queries: usize,
}

/// Draws `pairs_per_query` pairs per query, uniformly over its relevant and
/// non-relevant candidates, then shuffles them. Unjudged candidates count as
/// non-relevant.
pub fn sample_pairs<R: Rng + ?Sized>(
    qrels: &Qrels,
    pools: &CandidatePool,
    pairs_per_query: usize,
    rng: &mut R,
) -> SampledPairs {
    let mut out = SampledPairs::default();
    for (qid, pids) in pools.iter() {
        let (pos, neg): (Vec<&String>, Vec<&String>) = pids.iter().partition(|pid| qrels.is_relevant(qid, pid));
        if pos.is_empty() || neg.is_empty() {
            out.skipped_queries += 1;
            continue;
        }
        for _ in 0..pairs_per_query {
            out.pairs.push(TrainPair {
                qid: qid.to_owned(),
                pid_pos: pos[rng.gen_range(0..pos.len())].clone(),
                pid_neg: neg[rng.gen_range(0..neg.len())].clone(),
            });
        }
    }
    out.pairs.shuffle(rng);
    out
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_map: Option<f64>,
    /// Whole epoch, including representation loading and dev evaluation.
    pub wall_seconds: f64,
    /// Batches over the training phase only (dev evaluation excluded).
    pub batches_per_sec: f64,
}

/// Where encoder representations come from.
#[derive(Debug, Clone, Copy)]
pub enum ReprSource<'a> {
    /// A prebuilt cache.
    Cache(&'a CacheStore),
    /// A token-representation file, pooled into a cache during the first
    /// epoch and reused afterwards.
    Tokrep(&'a Path),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters of the best epoch, or the initial ones if no epoch ran.
    pub model: M,
    pub best_epoch: Option<usize>,
    pub best_dev_map: Option<f64>,
    pub log: Vec<EpochLog>,
    /// The cache built from a [`ReprSource::Tokrep`] source.
    pub built_cache: Option<CacheStore>,
    pub skipped_queries: usize,
}

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3u64, |acc, &p| {
        let mut z = (acc ^ p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

/// Loss and parameter gradients for one pair.
pub fn pair_gradients<M: RankModel>(
    model: &M,
    cache: &CacheStore,
    pair: &TrainPair,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let pos = cache.require(&pair.qid, &pair.pid_pos)?;
    let neg = cache.require(&pair.qid, &pair.pid_neg)?;
    let mut g = Graph::new();
    let (bound, leaves) = model.bind(&mut g)?;
    let mut mode = Mode::Train {
        dropout: cfg.dropout,
        rng,
    };
    let sp = model.score_node(&mut g, &bound, pos, &mut mode)?;
    let sn = model.score_node(&mut g, &bound, neg, &mut mode)?;
    let diff = g.sub(sn, sp)?;
    let margin = g.vector(vec![cfg.margin])?;
    let shifted = g.add(diff, margin)?;
    let loss = g.relu(shifted)?;
    let value = g.scalar(loss);
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    if value == 0.0 {
        return Ok((0.0, sizes.into_iter().map(|n| vec![0.0; n]).collect()));
    }
    let mut grads = g.backward(loss)?;
    Ok((
        value,
        leaves.iter().zip(sizes).map(|(&id, n)| grads.take(id, n)).collect(),
    ))
}

/// Pairs evaluated concurrently before their gradients are folded in.
const REDUCE_CHUNK: usize = 16;

/// Runs `cfg.epochs` epochs starting from `init`.
pub fn train<M: RankModel>(
    cfg: &TrainConfig,
    init: M,
    source: ReprSource,
    qrels: &Qrels,
    pools: &CandidatePool,
    dev_pools: &CandidatePool,
) -> Result<TrainOutcome<M>> {
    cfg.check()?;
    let mut outcome = TrainOutcome {
        model: init.clone(),
        best_epoch: None,
        best_dev_map: None,
        log: Vec::new(),
        built_cache: None,
        skipped_queries: 0,
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }
    let mut model = init;
    let mut adam = AdamW::from_config(&model.params(), cfg);
    let mut step = 0u64;
    let mut built: Option<CacheStore> = None;

    if let ReprSource::Cache(cache) = source {
        check_cache(cache, model.enc_dim(), pools, dev_pools)?;
    }

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let cache: &CacheStore = match (source, &built) {
            (ReprSource::Cache(c), _) => c,
            (ReprSource::Tokrep(_), Some(c)) => c,
            (ReprSource::Tokrep(path), None) => {
                let reader = TokrepReader::open(path)?;
                let store = build_cache(reader.enc_dim(), reader)?;
                check_cache(&store, model.enc_dim(), pools, dev_pools)?;
                built.insert(store)
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64]));
        let sampled = sample_pairs(qrels, pools, cfg.pairs_per_query, &mut rng);
        if sampled.pairs.is_empty() {
            return Err(Error::Empty(
                "no query in the training pools has both a relevant and a non-relevant candidate".into(),
            ));
        }
        if epoch == 1 && sampled.skipped_queries > 0 {
            log::warn!(
                "skipping {} queries without both relevant and non-relevant candidates",
                sampled.skipped_queries
            );
        }
        outcome.skipped_queries = sampled.skipped_queries;

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in sampled.pairs.chunks(cfg.batch_size) {
            step += 1;
            batches += 1;
            let mut total: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
            let mut batch_loss = 0.0;
            for (c, chunk) in batch.chunks(REDUCE_CHUNK).enumerate() {
                let results: Vec<(f64, Vec<Vec<f64>>)> = chunk
                    .par_iter()
                    .enumerate()
                    .map(|(i, pair)| {
                        let idx = (c * REDUCE_CHUNK + i) as u64;
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, step, idx]));
                        pair_gradients(&model, cache, pair, cfg, &mut rng)
                    })
                    .collect::<Result<_>>()?;
                for (loss, grads) in results {
                    batch_loss += loss;
                    for (t, g) in total.iter_mut().zip(grads) {
                        t.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                }
            }
            let n = batch.len() as f64;
            total.iter_mut().flatten().for_each(|v| *v /= n);
            loss_sum += batch_loss;
            adam.step(&mut model.params_mut(), &total, lr_at(step, cfg))?;
        }
        let train_seconds = started.elapsed().as_secs_f64();

        let dev_map = if dev_pools.is_empty() {
            None
        } else {
            let run = rerank(dev_pools, cache, |rec| model.score(rec, &mut Mode::Inference))?;
            Some(evaluate(&run, qrels)?.map)
        };
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / sampled.pairs.len() as f64,
            dev_map,
            wall_seconds: started.elapsed().as_secs_f64(),
            batches_per_sec: batches as f64 / train_seconds.max(f64::MIN_POSITIVE),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} dev MAP {} ({:.1} batches/s)",
            entry.mean_loss,
            dev_map.map_or("n/a".to_string(), |m| format!("{m:.4}")),
            entry.batches_per_sec
        );
        outcome.log.push(entry);

        let improved = match (dev_map, outcome.best_dev_map) {
            (Some(m), Some(best)) => m > best,
            (Some(_), None) => true,
            // Without dev pools the latest epoch wins.
            (None, _) => true,
        };
        if improved {
            outcome.model = model.clone();
            outcome.best_epoch = Some(epoch);
            outcome.best_dev_map = dev_map;
        }
    }
    outcome.built_cache = built;
    Ok(outcome)
}

fn check_cache(cache: &CacheStore, enc_dim: usize, pools: &CandidatePool, dev_pools: &CandidatePool) -> Result<()> {
    if cache.enc_dim() != enc_dim {
        return Err(Error::Shape {
            op: "train",
            detail: format!("cache enc_dim {} vs model enc_dim {enc_dim}", cache.enc_dim()),
        });
    }
    check_coverage(pools, cache)?;
    check_coverage(dev_pools, cache)
}
