//! Batch pipeline driver: synthesize corpora, train, infer, evaluate, and
//! analyze, with reproducible seeds and a `key = value` config file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{
    cmd_analyze, cmd_eval, cmd_infer, cmd_keyword, cmd_synth, cmd_train, usage, AnalyzeKind,
    AnalyzeOpts, AppError, EvalOpts, InferOpts, KeywordOpts, SynthOpts, TrainMode, TrainOpts,
};
use config::ConfigFile;
use perspectra::model::ModelConfig;
use perspectra::selftrain::{SelfTrainConfig, Variant};
use perspectra::synthgen::{GenConfig, GenMode};

#[derive(Parser, Debug)]
#[command(name = "perspectra", version, about = "Graph-based perspective and stance detection")]
struct Cli {
    /// `key = value` config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
    /// Train a model, optionally with the self-learning loop.
    Train(TrainArgs),
    /// Run a trained checkpoint over a corpus and write predictions.
    Infer(InferArgs),
    /// Score predictions against gold labels (six task columns).
    Eval(EvalArgs),
    /// Corpus analyses over predictions.
    Analyze(AnalyzeArgs),
    /// Keyword-rule stance baseline, in the same predictions format.
    Keyword(KeywordArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// real | weak
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    authors: Option<usize>,
    #[arg(long)]
    tweets_min: Option<usize>,
    #[arg(long)]
    tweets_max: Option<usize>,
    #[arg(long)]
    stance_mix: Option<f64>,
    #[arg(long)]
    ambiguous_rate: Option<f64>,
    #[arg(long)]
    homophily: Option<f64>,
    #[arg(long)]
    entity_rate: Option<f64>,
    #[arg(long)]
    behavior_alignment: Option<f64>,
    /// Lexicon file; built-in default when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Perspective-table file; built-in default when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// direct | weak
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    weak_corpus: Option<PathBuf>,
    #[arg(long)]
    train_authors: Option<usize>,
    /// text | author | full
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    d_in: Option<usize>,
    #[arg(long)]
    d_h1: Option<usize>,
    #[arg(long)]
    d_h2: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Epochs between inference steps.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    stop_frac: Option<f64>,
    #[arg(long)]
    stop_patience: Option<usize>,
    #[arg(long)]
    warmup_cap: Option<usize>,
    /// Keep mention edge types fixed instead of refreshing them at inference
    /// steps.
    #[arg(long)]
    no_refresh_edges: bool,
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Weak-supervision corpus merged at training time; must match.
    #[arg(long)]
    weak_corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// split.csv from `train --mode direct`; restricts scoring to its test
    /// authors.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// pmi | trends | correlation
    kind: Option<String>,
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Minimum corpus frequency for a perspective to appear in PMI output.
    #[arg(long)]
    min_frac: Option<f64>,
}

#[derive(Args, Debug)]
struct KeywordArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
}

fn init_kernel_threads() -> Result<(), AppError> {
    if let Ok(raw) = std::env::var("PERSPECTRA_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| usage(format!("PERSPECTRA_THREADS must be a positive integer, got {raw:?}")))?;
        if n == 0 {
            return Err(usage("PERSPECTRA_THREADS must be at least 1"));
        }
        perspectra::numkit::set_kernel_threads(n);
    }
    Ok(())
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, AppError> {
    value.ok_or_else(|| usage(format!("missing required option {flag}")))
}

fn resolve<T: std::str::FromStr + Copy>(
    flag: Option<T>,
    section: &mut config::SectionView,
    key: &str,
    default: T,
) -> Result<T, AppError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        let _ = section.get(key);
        return Ok(v);
    }
    match section.parse::<T>(key) {
        Ok(Some(v)) => Ok(v),
        Ok(None) => Ok(default),
        Err(e) => Err(usage(e.to_string())),
    }
}

fn resolve_path(
    flag: Option<PathBuf>,
    section: &mut config::SectionView,
    key: &str,
) -> Result<PathBuf, AppError> {
    if let Some(v) = flag {
        let _ = section.get(key);
        return Ok(v);
    }
    Ok(section.get(key).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("run")))
}

fn run_command(cli: Cli) -> Result<(), AppError> {
    init_kernel_threads()?;
    let file = match &cli.config {
        None => ConfigFile::default(),
        Some(path) => ConfigFile::load(path).map_err(|e| usage(e.to_string()))?,
    };
    let seed = cli.seed;
    let out = cli.out.clone();

    match cli.command {
        Command::Synth(args) => {
            let mut section = file.section("synth");
            let defaults = GenConfig::default();
            let mode = match args.mode.or_else(|| section.get("mode").map(String::from)).as_deref() {
                None | Some("real") => GenMode::RealLike,
                Some("weak") => GenMode::WeakSupervision,
                Some(other) => return Err(usage(format!("unknown synth mode {other:?}"))),
            };
            let gen = GenConfig {
                n_authors: resolve(args.authors, &mut section, "authors", defaults.n_authors)?,
                tweets_per_author: (
                    resolve(args.tweets_min, &mut section, "tweets_min", defaults.tweets_per_author.0)?,
                    resolve(args.tweets_max, &mut section, "tweets_max", defaults.tweets_per_author.1)?,
                ),
                stance_mix: resolve(args.stance_mix, &mut section, "stance_mix", defaults.stance_mix)?,
                ambiguous_rate: resolve(
                    args.ambiguous_rate,
                    &mut section,
                    "ambiguous_rate",
                    defaults.ambiguous_rate,
                )?,
                retweet_homophily: resolve(
                    args.homophily,
                    &mut section,
                    "homophily",
                    defaults.retweet_homophily,
                )?,
                entity_rate: resolve(args.entity_rate, &mut section, "entity_rate", defaults.entity_rate)?,
                behavior_alignment: resolve(
                    args.behavior_alignment,
                    &mut section,
                    "behavior_alignment",
                    defaults.behavior_alignment,
                )?,
                seed: resolve(seed, &mut section, "seed", 0)?,
                mode,
            };
            let lexicon = args.lexicon.or_else(|| section.get("lexicon").map(PathBuf::from));
            let table = args.table.or_else(|| section.get("table").map(PathBuf::from));
            let out = resolve_path(out, &mut section, "out")?;
            section.finish().map_err(|e| usage(e.to_string()))?;
            cmd_synth(&SynthOpts { mode, gen, lexicon, table, out })
        }
        Command::Train(args) => {
            let mut section = file.section("train");
            let mode = match args.mode.or_else(|| section.get("mode").map(String::from)).as_deref() {
                None | Some("direct") => TrainMode::Direct,
                Some("weak") => TrainMode::Weak,
                Some(other) => return Err(usage(format!("unknown train mode {other:?}"))),
            };
            let variant =
                match args.variant.or_else(|| section.get("variant").map(String::from)).as_deref() {
                    None | Some("full") => Variant::SelfLearning,
                    Some("author") => Variant::AuthorNetwork,
                    Some("text") => Variant::TextOnly,
                    Some(other) => return Err(usage(format!("unknown variant {other:?}"))),
                };
            let md = ModelConfig::default();
            let sd = SelfTrainConfig::default();
            let seed = resolve(seed, &mut section, "seed", 0)?;
            let model = ModelConfig {
                d_in: resolve(args.d_in, &mut section, "d_in", md.d_in)?,
                d_h1: resolve(args.d_h1, &mut section, "d_h1", md.d_h1)?,
                d_h2: resolve(args.d_h2, &mut section, "d_h2", md.d_h2)?,
                lr: resolve(args.lr, &mut section, "lr", md.lr)?,
                weight_decay: resolve(args.weight_decay, &mut section, "weight_decay", md.weight_decay)?,
                seed,
                author_aware: true,
            };
            let selftrain = SelfTrainConfig {
                k: resolve(args.k, &mut section, "k", sd.k)?,
                max_epochs: resolve(args.max_epochs, &mut section, "max_epochs", sd.max_epochs)?,
                stop_frac: resolve(args.stop_frac, &mut section, "stop_frac", sd.stop_frac)?,
                stop_patience: resolve(args.stop_patience, &mut section, "stop_patience", sd.stop_patience)?,
                warmup_cap: resolve(args.warmup_cap, &mut section, "warmup_cap", sd.warmup_cap)?,
                refresh_mention_edges: !args.no_refresh_edges,
                ..sd
            };
            selftrain.validate().map_err(|e| usage(e.to_string()))?;
            let corpus = args.corpus.or_else(|| section.get("corpus").map(PathBuf::from));
            let weak_corpus = args.weak_corpus.or_else(|| section.get("weak_corpus").map(PathBuf::from));
            let train_authors = resolve(args.train_authors, &mut section, "train_authors", 10)?;
            let table = args.table.or_else(|| section.get("table").map(PathBuf::from));
            let out = resolve_path(out, &mut section, "out")?;
            section.finish().map_err(|e| usage(e.to_string()))?;
            cmd_train(&TrainOpts {
                corpus: required(corpus, "--corpus")?,
                mode,
                weak_corpus,
                train_authors,
                variant,
                model,
                selftrain,
                table,
                seed,
                out,
            })
        }
        Command::Infer(args) => {
            let mut section = file.section("infer");
            let checkpoint = args.checkpoint.or_else(|| section.get("checkpoint").map(PathBuf::from));
            let corpus = args.corpus.or_else(|| section.get("corpus").map(PathBuf::from));
            let weak_corpus = args.weak_corpus.or_else(|| section.get("weak_corpus").map(PathBuf::from));
            let out = resolve_path(out, &mut section, "out")?;
            section.finish().map_err(|e| usage(e.to_string()))?;
            cmd_infer(&InferOpts {
                checkpoint: required(checkpoint, "--checkpoint")?,
                corpus: required(corpus, "--corpus")?,
                weak_corpus,
                out,
            })
        }
        Command::Eval(args) => {
            let mut section = file.section("eval");
            let preds = args.preds.or_else(|| section.get("preds").map(PathBuf::from));
            let corpus = args.corpus.or_else(|| section.get("corpus").map(PathBuf::from));
            let split = args.split.or_else(|| section.get("split").map(PathBuf::from));
            let out = resolve_path(out, &mut section, "out")?;
            section.finish().map_err(|e| usage(e.to_string()))?;
            cmd_eval(&EvalOpts {
                preds: required(preds, "--preds")?,
                corpus: required(corpus, "--corpus")?,
                split,
                out,
            })
        }
        Command::Analyze(args) => {
            let mut section = file.section("analyze");
            let kind = match args.kind.as_deref() {
                Some("pmi") => AnalyzeKind::Pmi,
                Some("trends") => AnalyzeKind::Trends,
                Some("correlation") => AnalyzeKind::Correlation,
                Some(other) => return Err(usage(format!("unknown analysis {other:?}"))),
                None => return Err(usage("expected analysis kind: pmi | trends | correlation")),
            };
            let preds = args.preds.or_else(|| section.get("preds").map(PathBuf::from));
            let corpus = args.corpus.or_else(|| section.get("corpus").map(PathBuf::from));
            let min_frac = resolve(args.min_frac, &mut section, "min_frac", 0.005)?;
            let seed = resolve(seed, &mut section, "seed", 0)?;
            let out = resolve_path(out, &mut section, "out")?;
            section.finish().map_err(|e| usage(e.to_string()))?;
            cmd_analyze(&AnalyzeOpts {
                kind,
                preds: required(preds, "--preds")?,
                corpus: required(corpus, "--corpus")?,
                min_frac,
                seed,
                out,
            })
        }
        Command::Keyword(args) => {
            let mut section = file.section("keyword");
            let corpus = args.corpus.or_else(|| section.get("corpus").map(PathBuf::from));
            let seed = resolve(seed, &mut section, "seed", 0)?;
            let out = resolve_path(out, &mut section, "out")?;
            section.finish().map_err(|e| usage(e.to_string()))?;
            cmd_keyword(&KeywordOpts { corpus: required(corpus, "--corpus")?, seed, out })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests exit successfully.
            let code = if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                0
            } else {
                1
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run_command(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code.clamp(0, 255) as u8)
        }
    }
}
