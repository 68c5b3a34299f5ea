//! One function per subcommand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dmn_rerank::analysis::{diffusion as measure_diffusion, gate_heatmap};
use dmn_rerank::data::{
    build_cache as pool_records, load_pools, load_qrels, read_cache, read_run, read_tokrep, write_cache, write_run,
    write_tokrep, CacheRecord, CacheStore, CandidatePool,
};
use dmn_rerank::eval::{evaluate, missing_pairs, rerank as rerank_pools};
use dmn_rerank::model::{read_checkpoint, write_checkpoint, AnyModel, ClsHead};
use dmn_rerank::synthetic::{generate, SyntheticSpec};
use dmn_rerank::training::{train as train_model, EpochLog, ReprSource};
use log::info;
use serde::Serialize;

use crate::manifest::{digest_file, manifest_path, unix_now, RunManifest};
use crate::{
    BuildCacheArgs, DiffusionArgs, EvalArgs, Failure, GatesArgs, Head, RerankArgs, SynthArgs, TrainArgs, ValidateArgs,
};

type Outcome = Result<(), Failure>;

fn require_input(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input file {} does not exist", path.display())))
    }
}

/// Collects what a command read and wrote, then writes the manifest.
struct Recorder {
    command: &'static str,
    started: f64,
    threads: usize,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    fn new(command: &'static str, threads: usize) -> Self {
        Self {
            command,
            started: unix_now(),
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Outcome {
        require_input(path)?;
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `<anchor>.manifest.json`.
    fn finish<C: Serialize>(self, config: &C, seed: Option<u64>, anchor: &Path) -> Outcome {
        let inputs = self
            .inputs
            .iter()
            .map(|p| digest_file(p))
            .collect::<std::io::Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: "dmn-rerank",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: serde_json::to_value(config).map_err(|e| Failure::Internal(e.to_string()))?,
            seed,
            threads: self.threads,
            inputs,
            outputs: self.outputs,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        manifest.write(&manifest_path(anchor))?;
        Ok(())
    }
}

/// Loads a cache directly or pools one from a token-representation file.
fn load_representations(
    rec: &mut Recorder,
    cache: Option<&Path>,
    tokrep: Option<&Path>,
) -> Result<CacheStore, Failure> {
    match (cache, tokrep) {
        (Some(path), _) => {
            rec.input(path)?;
            Ok(read_cache(path)?)
        }
        (None, Some(path)) => {
            rec.input(path)?;
            let reader = read_tokrep(path)?;
            Ok(pool_records(reader.enc_dim(), reader)?)
        }
        (None, None) => Err(Failure::Usage("one of --cache or --tokrep is required".into())),
    }
}

pub fn validate(args: &ValidateArgs) -> Outcome {
    require_input(&args.tokrep)?;
    let reader = read_tokrep(&args.tokrep)?;
    let enc_dim = reader.enc_dim();
    let mut records = 0u64;
    let mut sentences = 0u64;
    for rec in reader {
        sentences += rec?.sentence_count() as u64;
        records += 1;
    }
    println!(
        "{}: ok, {records} records, {sentences} sentences, enc_dim {enc_dim}",
        args.tokrep.display()
    );
    Ok(())
}

pub fn build_cache(args: &BuildCacheArgs, threads: usize) -> Outcome {
    let mut rec = Recorder::new("build-cache", threads);
    let store = load_representations(&mut rec, None, Some(&args.tokrep))?;
    write_cache(&args.out, &store)?;
    rec.output(&args.out);
    println!("{}: {} records", args.out.display(), store.len());
    rec.finish(args, None, &args.out)
}

fn write_log(path: &Path, log: &[EpochLog]) -> Outcome {
    let mut w = BufWriter::new(File::create(path)?);
    for entry in log {
        let line = serde_json::to_string(entry).map_err(|e| Failure::Internal(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn train(args: &TrainArgs, threads: usize) -> Outcome {
    let cfg = args.config();
    cfg.check()?;
    let mut rec = Recorder::new("train", threads);
    rec.input(&args.qrels)?;
    rec.input(&args.pools)?;
    let qrels = load_qrels(&args.qrels, args.threshold)?;
    let pools = load_pools(&args.pools)?;
    let dev_pools = match &args.dev_pools {
        Some(path) => {
            rec.input(path)?;
            load_pools(path)?
        }
        None => CandidatePool::new(),
    };

    let existing_cache = args.cache.as_deref().filter(|p| p.exists());
    let loaded;
    let (source, enc_dim) = match (existing_cache, &args.tokrep) {
        (Some(path), _) => {
            rec.input(path)?;
            loaded = read_cache(path)?;
            (ReprSource::Cache(&loaded), loaded.enc_dim())
        }
        (None, Some(path)) => {
            rec.input(path)?;
            let enc_dim = read_tokrep(path)?.enc_dim();
            (ReprSource::Tokrep(path), enc_dim)
        }
        (None, None) => {
            return Err(Failure::Usage(
                "--tokrep is required unless --cache names an existing cache".into(),
            ))
        }
    };

    let (model, best_epoch, best_dev_map, log, built) = match args.head {
        Head::Dmn => {
            let out = train_model(&cfg, cfg.init_dmn(enc_dim)?, source, &qrels, &pools, &dev_pools)?;
            if out.skipped_queries > 0 {
                info!("{} training queries had no usable pair", out.skipped_queries);
            }
            (
                AnyModel::Dmn(out.model),
                out.best_epoch,
                out.best_dev_map,
                out.log,
                out.built_cache,
            )
        }
        Head::Cls => {
            let out = train_model(&cfg, cfg.init_cls(enc_dim)?, source, &qrels, &pools, &dev_pools)?;
            (
                AnyModel::Cls(out.model),
                out.best_epoch,
                out.best_dev_map,
                out.log,
                out.built_cache,
            )
        }
    };

    write_checkpoint(&args.out, &model)?;
    rec.output(&args.out);
    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.out, ".log.jsonl"));
    write_log(&log_path, &log)?;
    rec.output(&log_path);
    if let (Some(path), Some(store)) = (&args.cache, built) {
        if !path.exists() {
            write_cache(path, &store)?;
            rec.output(path);
        }
    }

    for entry in &log {
        info!(
            "epoch {} loss {:.6} dev MAP {:?} ({:.2}s)",
            entry.epoch, entry.mean_loss, entry.dev_map, entry.wall_seconds
        );
    }
    match (best_epoch, best_dev_map) {
        (Some(e), Some(map)) => println!("best epoch {e}, dev MAP {map:.4}"),
        (Some(e), None) => println!("trained {e} epochs"),
        _ => println!("no epochs run, wrote initial parameters"),
    }

    #[derive(Serialize)]
    struct Recorded<'a> {
        #[serde(flatten)]
        args: &'a TrainArgs,
        log: PathBuf,
    }
    rec.finish(
        &Recorded {
            args,
            log: log_path.clone(),
        },
        Some(cfg.seed),
        &args.out,
    )
}

/// The checkpoint's model, converted to the requested head.
fn select_head(model: AnyModel, head: Option<Head>) -> Result<AnyModel, Failure> {
    match (model, head) {
        (AnyModel::Dmn(p), Some(Head::Cls)) => Ok(AnyModel::Cls(ClsHead::from_answer_layer(&p))),
        (AnyModel::Cls(_), Some(Head::Dmn)) => Err(Failure::Usage(
            "--head dmn needs a memory network checkpoint, this one holds a CLS head".into(),
        )),
        (model, _) => Ok(model),
    }
}

fn model_enc_dim(model: &AnyModel) -> usize {
    match model {
        AnyModel::Dmn(p) => p.dims.enc_dim,
        AnyModel::Cls(h) => h.enc_dim(),
    }
}

fn check_width(model: &AnyModel, enc_dim: usize) -> Outcome {
    let expected = model_enc_dim(model);
    if expected != enc_dim {
        return Err(Failure::Data(format!(
            "representations have enc_dim {enc_dim}, the checkpoint expects {expected}"
        )));
    }
    Ok(())
}

pub fn rerank(args: &RerankArgs, threads: usize) -> Outcome {
    let mut rec = Recorder::new("rerank", threads);
    rec.input(&args.checkpoint)?;
    rec.input(&args.pools)?;
    let model = select_head(read_checkpoint(&args.checkpoint)?, args.head)?;
    let pools = load_pools(&args.pools)?;
    let cache = load_representations(&mut rec, args.cache.as_deref(), args.tokrep.as_deref())?;
    check_width(&model, cache.enc_dim())?;

    let missing = missing_pairs(&pools, &cache);
    if !missing.is_empty() {
        let listed: Vec<String> = missing.iter().map(|(q, p)| format!("  {q} {p}")).collect();
        return Err(Failure::Data(format!(
            "{} candidate pairs have no cached representation:\n{}",
            missing.len(),
            listed.join("\n")
        )));
    }

    let run = rerank_pools(&pools, &cache, |r| model.score(r))?;
    write_run(&args.out, &run, &args.tag)?;
    rec.output(&args.out);
    println!("{}: {} queries", args.out.display(), run.len());
    rec.finish(args, None, &args.out)
}

pub fn eval(args: &EvalArgs, threads: usize) -> Outcome {
    let mut rec = Recorder::new("eval", threads);
    rec.input(&args.run)?;
    rec.input(&args.qrels)?;
    let run = read_run(&args.run)?;
    let qrels = load_qrels(&args.qrels, args.threshold)?;
    let report = evaluate(&run, &qrels)?;
    print!("{}", report.summary());
    if !report.excluded_no_relevant.is_empty() {
        eprintln!(
            "excluded (no relevant passage): {}",
            report.excluded_no_relevant.join(" ")
        );
    }
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json()?)?;
        rec.output(out);
        rec.finish(args, None, out)?;
    }
    Ok(())
}

pub fn diffusion(args: &DiffusionArgs, threads: usize) -> Outcome {
    let mut rec = Recorder::new("diffusion", threads);
    rec.input(&args.tokrep)?;
    let report = measure_diffusion(read_tokrep(&args.tokrep)?, args.sample, args.seed)?;
    std::fs::write(&args.out, report.to_json()?)?;
    rec.output(&args.out);
    if let Some(csv) = &args.histogram_csv {
        std::fs::write(csv, report.histogram_csv())?;
        rec.output(csv);
    }
    println!(
        "{} of {} pairs sampled; mean cosine cls-query {:.4}, cls-passage {:.4}, within passage {:.4}",
        report.pair_count,
        report.records_seen,
        report.cls_query.mean,
        report.cls_passage.mean,
        report.innerpassage.mean
    );
    rec.finish(args, Some(args.seed), &args.out)
}

fn find_record(rec: &mut Recorder, args: &GatesArgs) -> Result<CacheRecord, Failure> {
    let missing = || {
        Failure::Data(format!(
            "no representation for query `{}`, passage `{}`",
            args.qid, args.pid
        ))
    };
    if args.cache.is_none() {
        if let Some(path) = &args.tokrep {
            rec.input(path)?;
            for r in read_tokrep(path)? {
                let r = r?;
                if r.qid == args.qid && r.pid == args.pid {
                    return Ok(CacheRecord::from_tokrep(&r));
                }
            }
            return Err(missing());
        }
    }
    let store = load_representations(rec, args.cache.as_deref(), None)?;
    store.get(&args.qid, &args.pid).cloned().ok_or_else(missing)
}

pub fn gates(args: &GatesArgs, threads: usize) -> Outcome {
    let mut rec = Recorder::new("gates", threads);
    rec.input(&args.checkpoint)?;
    let AnyModel::Dmn(model) = read_checkpoint(&args.checkpoint)? else {
        return Err(Failure::Usage(
            "gate inspection needs a memory network checkpoint".into(),
        ));
    };
    let record = find_record(&mut rec, args)?;
    check_width(&AnyModel::Dmn(model.clone()), record.enc_dim())?;

    #[derive(Serialize)]
    struct GateDump<'a> {
        qid: &'a str,
        pid: &'a str,
        episodes: usize,
        sentences: usize,
        /// One row per episode, one column per sentence.
        gates: Vec<Vec<f64>>,
    }
    let gates = gate_heatmap(&model, &record)?;
    let dump = GateDump {
        qid: &args.qid,
        pid: &args.pid,
        episodes: gates.len(),
        sentences: record.sentence_vectors.rows(),
        gates,
    };
    let mut text = serde_json::to_string_pretty(&dump).map_err(|e| Failure::Internal(e.to_string()))?;
    text.push('\n');
    match &args.out {
        Some(out) => {
            std::fs::write(out, text)?;
            rec.output(out);
            rec.finish(args, None, out)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn synth(args: &SynthArgs, threads: usize) -> Outcome {
    if args.dev_queries >= args.queries {
        return Err(Failure::Usage("--dev-queries must be smaller than --queries".into()));
    }
    let spec = SyntheticSpec {
        queries: args.queries,
        candidates: args.candidates,
        relevant_per_query: args.relevant,
        enc_dim: args.enc_dim,
        signal_strength: args.strength,
        noise: args.noise,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec)?;
    let mut rec = Recorder::new("synth", threads);
    std::fs::create_dir_all(&args.out_dir)?;

    let tokrep = args.out_dir.join("tokrep.bin");
    write_tokrep(&tokrep, spec.enc_dim, &data.records)?;
    rec.output(&tokrep);

    let qrels = args.out_dir.join("qrels.txt");
    let mut w = BufWriter::new(File::create(&qrels)?);
    for (qid, pids) in data.pools.iter() {
        for pid in pids {
            if let Some(grade) = data.qrels.grade(qid, pid) {
                writeln!(w, "{qid} 0 {pid} {grade}")?;
            }
        }
    }
    w.flush()?;
    rec.output(&qrels);

    let (train, dev) = data.split_pools(args.queries - args.dev_queries)?;
    for (name, pool) in [("train_pools.tsv", &train), ("dev_pools.tsv", &dev)] {
        let path = args.out_dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        for (qid, pids) in pool.iter() {
            for pid in pids {
                writeln!(w, "{qid}\t{pid}")?;
            }
        }
        w.flush()?;
        rec.output(&path);
    }
    println!(
        "{}: {} queries x {} candidates, enc_dim {}",
        args.out_dir.display(),
        args.queries,
        args.candidates,
        args.enc_dim
    );
    rec.finish(args, Some(args.seed), &args.out_dir.join("synth"))
}
