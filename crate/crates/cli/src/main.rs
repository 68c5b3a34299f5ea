//! `dmn-rerank`: batch commands for building representation caches, training
//! and applying the re-ranker, scoring runs and analysing representations.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmn_rerank::synthetic::SyntheticSpec;
use dmn_rerank::training::TrainConfig;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "dmn-rerank",
    version,
    about = "Passage re-ranking with a dynamic memory network"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a token-representation file record by record.
    Validate(ValidateArgs),
    /// Pool a token-representation file into a sentence cache.
    BuildCache(BuildCacheArgs),
    /// Train a re-ranking head with the pairwise max-margin loss.
    Train(TrainArgs),
    /// Re-rank candidate pools with a trained checkpoint.
    Rerank(RerankArgs),
    /// Compute MRR and MAP for a run file.
    Eval(EvalArgs),
    /// Measure how much token representations resemble each other.
    Diffusion(DiffusionArgs),
    /// Dump the episodic attention gates for one query-passage pair.
    Gates(GatesArgs),
    /// Write a synthetic dataset with a planted relevance signal.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Dmn,
    Cls,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// Token-representation file.
    pub tokrep: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildCacheArgs {
    #[arg(long)]
    pub tokrep: PathBuf,
    /// Cache file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Token-representation file, pooled into a cache on the first epoch.
    #[arg(long)]
    pub tokrep: Option<PathBuf>,
    /// Sentence cache. Read if it exists, otherwise built from --tokrep and
    /// written here.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Lowest grade counted as relevant.
    #[arg(long, default_value_t = 1)]
    pub threshold: u32,
    /// Training candidate pools.
    #[arg(long)]
    pub pools: PathBuf,
    /// Development pools used to select the best epoch.
    #[arg(long)]
    pub dev_pools: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSONL log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Head::Dmn)]
    pub head: Head,
    #[arg(long, default_value_t = TrainConfig::default().margin)]
    pub margin: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().warmup_steps)]
    pub warmup_steps: u64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().episodes)]
    pub episodes: usize,
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    pub hidden: usize,
    #[arg(long, default_value_t = TrainConfig::default().dropout)]
    pub dropout: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().beta1)]
    pub beta1: f64,
    #[arg(long, default_value_t = TrainConfig::default().beta2)]
    pub beta2: f64,
    #[arg(long, default_value_t = TrainConfig::default().eps)]
    pub eps: f64,
    #[arg(long, default_value_t = TrainConfig::default().pairs_per_query)]
    pub pairs_per_query: usize,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            lr: self.lr,
            warmup_steps: self.warmup_steps,
            batch_size: self.batch_size,
            episodes: self.episodes,
            hidden: self.hidden,
            dropout: self.dropout,
            epochs: self.epochs,
            seed: self.seed,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            pairs_per_query: self.pairs_per_query,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RerankArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pools: PathBuf,
    #[arg(long, conflicts_with = "tokrep")]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub tokrep: Option<PathBuf>,
    /// Scoring head (default: the checkpoint's own). `cls` on a memory
    /// network checkpoint scores with the CLS slice of its answer layer.
    #[arg(long, value_enum)]
    pub head: Option<Head>,
    /// Run file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "dmn-rerank")]
    pub tag: String,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threshold: u32,
    /// JSON report to write; the text summary always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiffusionArgs {
    #[arg(long)]
    pub tokrep: PathBuf,
    /// Fraction of query-passage pairs to analyse.
    #[arg(long, default_value_t = 0.1)]
    pub sample: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// JSON report to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the three histograms.
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GatesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, conflicts_with = "tokrep")]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub tokrep: Option<PathBuf>,
    #[arg(long)]
    pub qid: String,
    #[arg(long)]
    pub pid: String,
    /// JSON file to write (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Directory receiving `tokrep.bin`, `qrels.txt`, `train_pools.tsv` and
    /// `dev_pools.tsv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().queries)]
    pub queries: usize,
    /// Queries (last in qid order) held out as the development pools.
    #[arg(long, default_value_t = 4)]
    pub dev_queries: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().candidates)]
    pub candidates: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().relevant_per_query)]
    pub relevant: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().enc_dim)]
    pub enc_dim: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().signal_strength)]
    pub strength: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().noise)]
    pub noise: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().seed)]
    pub seed: u64,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<dmn_rerank::Error> for Failure {
    fn from(e: dmn_rerank::Error) -> Self {
        match e {
            dmn_rerank::Error::Config(m) => Failure::Usage(m),
            e if e.is_data_error() => Failure::Data(e.to_string()),
            e => Failure::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(format!("i/o error: {e}"))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = match cli.threads {
        Some(0) => return Err(Failure::Usage("--threads must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Internal(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Validate(a) => commands::validate(&a),
        Command::BuildCache(a) => commands::build_cache(&a, threads),
        Command::Train(a) => commands::train(&a, threads),
        Command::Rerank(a) => commands::rerank(&a, threads),
        Command::Eval(a) => commands::eval(&a, threads),
        Command::Diffusion(a) => commands::diffusion(&a, threads),
        Command::Gates(a) => commands::gates(&a, threads),
        Command::Synth(a) => commands::synth(&a, threads),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
        Err(_) => ExitCode::from(3),
    }
}
