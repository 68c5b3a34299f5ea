//! End-to-end behaviour of the training loop.

use std::io::Write;

use dmn_rerank::data::{build_cache, encode_tokrep, CacheStore, CandidatePool};
use dmn_rerank::model::{encode_checkpoint, AnyModel, ModelParams};
use dmn_rerank::synthetic::{generate, SyntheticData, SyntheticSpec};
use dmn_rerank::training::{train, ReprSource, TrainConfig};
use dmn_rerank::Error;

fn small_data(queries: usize) -> SyntheticData {
    generate(&SyntheticSpec {
        queries,
        candidates: 6,
        relevant_per_query: 1,
        enc_dim: 8,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn cache_of(data: &SyntheticData) -> CacheStore {
    build_cache(8, data.records.iter().cloned().map(Ok)).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        hidden: 6,
        episodes: 2,
        lr: 5e-3,
        warmup_steps: 4,
        batch_size: 4,
        epochs: 3,
        pairs_per_query: 2,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn checkpoint(p: &ModelParams) -> Vec<u8> {
    encode_checkpoint(&AnyModel::Dmn(p.clone())).unwrap()
}

fn run(cfg: &TrainConfig, data: &SyntheticData, cache: &CacheStore) -> dmn_rerank::training::TrainOutcome<ModelParams> {
    let (tr, dev) = data.split_pools(6).unwrap();
    train(
        cfg,
        cfg.init_dmn(8).unwrap(),
        ReprSource::Cache(cache),
        &data.qrels,
        &tr,
        &dev,
    )
    .unwrap()
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let data = small_data(4);
    let cache = cache_of(&data);
    let cfg = TrainConfig { epochs: 0, ..config() };
    let out = run(&cfg, &data, &cache);
    assert_eq!(out.model, cfg.init_dmn(8).unwrap());
    assert!(out.log.is_empty());
    assert_eq!(out.best_epoch, None);
}

#[test]
fn same_seed_same_checkpoint_and_frozen_cache() {
    let data = small_data(8);
    let cache = cache_of(&data);
    let before = cache.checksum();
    let a = run(&config(), &data, &cache);
    let b = run(&config(), &data, &cache);
    assert_eq!(cache.checksum(), before);
    assert_eq!(checkpoint(&a.model), checkpoint(&b.model));
    assert_eq!(a.log.len(), 3);
    assert!(a.log.iter().all(|l| l.dev_map.is_some() && l.mean_loss >= 0.0));
    let c = run(&TrainConfig { seed: 4, ..config() }, &data, &cache);
    assert_ne!(checkpoint(&a.model), checkpoint(&c.model));
}

#[test]
fn thread_count_does_not_change_results() {
    let data = small_data(8);
    let cache = cache_of(&data);
    let with = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| checkpoint(&run(&config(), &data, &cache).model))
    };
    assert_eq!(with(1), with(4));
}

#[test]
fn cold_tokrep_source_matches_warm_cache() {
    let data = small_data(8);
    let cache = cache_of(&data);
    let mut file = tempfile::NamedTempFile::new().unwrap();
    file.write_all(&encode_tokrep(8, &data.records).unwrap()).unwrap();
    let cfg = config();
    let (tr, dev) = data.split_pools(6).unwrap();
    let cold = train(
        &cfg,
        cfg.init_dmn(8).unwrap(),
        ReprSource::Tokrep(file.path()),
        &data.qrels,
        &tr,
        &dev,
    )
    .unwrap();
    let warm = run(&cfg, &data, &cache);
    assert_eq!(checkpoint(&cold.model), checkpoint(&warm.model));
    assert_eq!(cold.built_cache.unwrap().checksum(), cache.checksum());
    assert!(warm.built_cache.is_none());
}

#[test]
fn eight_pairs_can_be_memorised() {
    let data = generate(&SyntheticSpec {
        queries: 8,
        candidates: 2,
        relevant_per_query: 1,
        enc_dim: 8,
        seed: 5,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cache = cache_of(&data);
    let cfg = TrainConfig {
        hidden: 8,
        episodes: 2,
        dropout: 0.0,
        lr: 1e-2,
        warmup_steps: 0,
        batch_size: 8,
        epochs: 200,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let out = train(
        &cfg,
        cfg.init_dmn(8).unwrap(),
        ReprSource::Cache(&cache),
        &data.qrels,
        &data.pools,
        &CandidatePool::new(),
    )
    .unwrap();
    let last = out.log.last().unwrap();
    assert!(last.mean_loss < 0.01, "final loss {}", last.mean_loss);
    assert_eq!(out.best_epoch, Some(200));
}

#[test]
fn cache_miss_names_the_pair() {
    let data = small_data(3);
    let cache = cache_of(&data);
    let mut pools = CandidatePool::new();
    pools.insert("q000", vec!["q000-p00".into(), "ghost".into()]).unwrap();
    let cfg = config();
    let err = train(
        &cfg,
        cfg.init_dmn(8).unwrap(),
        ReprSource::Cache(&cache),
        &data.qrels,
        &pools,
        &CandidatePool::new(),
    )
    .unwrap_err();
    assert!(
        matches!(&err, Error::CacheMiss { qid, pid } if qid == "q000" && pid == "ghost"),
        "{err}"
    );
}

#[test]
fn queries_without_pairs_are_counted() {
    let data = small_data(4);
    let cache = cache_of(&data);
    let mut pools = CandidatePool::new();
    for (i, (qid, pids)) in data.pools.iter().enumerate() {
        let pids = if i == 0 {
            pids.iter()
                .filter(|p| !data.qrels.is_relevant(qid, p))
                .cloned()
                .collect()
        } else {
            pids.to_vec()
        };
        pools.insert(qid, pids).unwrap();
    }
    let cfg = TrainConfig { epochs: 1, ..config() };
    let out = train(
        &cfg,
        cfg.init_dmn(8).unwrap(),
        ReprSource::Cache(&cache),
        &data.qrels,
        &pools,
        &CandidatePool::new(),
    )
    .unwrap();
    assert_eq!(out.skipped_queries, 1);
}

#[test]
fn cls_head_trains_too() {
    let data = small_data(8);
    let cache = cache_of(&data);
    let cfg = config();
    let (tr, dev) = data.split_pools(6).unwrap();
    let init = cfg.init_cls(8).unwrap();
    let out = train(&cfg, init.clone(), ReprSource::Cache(&cache), &data.qrels, &tr, &dev).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_ne!(out.model, init);
}
