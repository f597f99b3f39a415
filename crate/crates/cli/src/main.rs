mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dualsearch::evaluation::Protocol;
use dualsearch::{Error, Result};

use crate::config::{Layout, RunConfig};

/// Dual-encoder code search: preprocessing, embeddings, training, evaluation
/// and querying.
#[derive(Debug, Parser)]
#[command(name = "dualsearch", version)]
struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every stage (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory holding every artifact of a run.
    #[arg(long, global = true, env = "DUALSEARCH_OUT", default_value = "dualsearch-out")]
    out: PathBuf,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded toy corpus as raw JSONL under <out>/raw.
    Synth(SynthArgs),
    /// Load, filter and tokenize raw JSONL pairs into <out>/data.
    Preprocess(PreprocessArgs),
    /// Train the subword CBOW embedding model(s) on every split.
    TrainEmbed(EmbedArgs),
    /// Train the dual encoder and index the test split.
    Train(TrainCmdArgs),
    /// Evaluate the trained encoder on the test split.
    Eval(EvalArgs),
    /// Rank the indexed code for a query, or read queries from stdin.
    Query(QueryArgs),
    /// Mean MRR over sampled pools of several sizes.
    Sweep(SweepArgs),
    /// Corpus statistics and linked/non-linked similarity.
    Stats(StatsArgs),
    /// Run the cross product of the ablation axes.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    train_pairs: Option<usize>,
    #[arg(long)]
    valid_pairs: Option<usize>,
    #[arg(long)]
    test_pairs: Option<usize>,
    #[arg(long)]
    distractors: Option<usize>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// File whose lines carry their own split field (repeatable).
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Read docstring/code/url/partition fields.
    #[arg(long)]
    codesearchnet_fields: bool,
    /// Rebuild splits as docstring queries against code with the docstring removed.
    #[arg(long)]
    dgms: bool,
    #[arg(long)]
    lowercase: bool,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// unified, separate or subword-off.
    #[arg(long)]
    language_model: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    embed_epochs: Option<usize>,
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    subsample: Option<f64>,
    /// Also write plain-text vectors.
    #[arg(long)]
    text_dump: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// cosine-bce, softmax or contrastive.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    output_size: Option<usize>,
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainCmdArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Continue from the saved training state.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Full,
    Limited,
    Sweep,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Full => Protocol::Full,
            ProtocolArg::Limited => Protocol::Limited,
            ProtocolArg::Sweep => Protocol::Sweep,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    protocol: Vec<ProtocolArg>,
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Also evaluate the seeded untrained encoder.
    #[arg(long)]
    untrained: bool,
    /// Non-linked draws for the similarity statistics.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Query text; without it queries are read line by line from stdin.
    text: Option<String>,
    #[arg(short, default_value_t = 10)]
    k: usize,
    /// Raw JSONL corpus used to print the code of each hit.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Most frequent words listed per modality.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long, value_delimiter = ',')]
    language_models: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    losses: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    output_sizes: Vec<usize>,
    #[arg(long = "pass-counts", value_delimiter = ',')]
    pass_counts: Vec<usize>,
    #[command(flatten)]
    embed: EmbedArgs,
    #[command(flatten)]
    train: TrainArgs,
}

fn apply_embed(cfg: &mut RunConfig, a: &EmbedArgs) -> Result<()> {
    let e = &mut cfg.embedding;
    if let Some(lm) = &a.language_model {
        e.language_model = lm.parse()?;
    }
    if let Some(v) = a.dim {
        e.cbow.dim = v;
    }
    if let Some(v) = a.embed_epochs {
        e.cbow.epochs = v;
    }
    if let Some(v) = a.buckets {
        e.subword.bucket_count = v;
    }
    if let Some(v) = a.subsample {
        e.cbow.subsample_threshold = v;
    }
    e.text_dump |= a.text_dump;
    Ok(())
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    let hp = &mut cfg.training;
    if let Some(loss) = &a.loss {
        hp.loss = loss.parse()?;
    }
    if let Some(v) = a.output_size {
        hp.output_size = v;
    }
    if let Some(v) = a.passes {
        hp.passes = v;
    }
    if let Some(v) = a.max_epochs {
        hp.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        hp.batch_size = v;
    }
    if let Some(v) = a.patience {
        hp.patience = v;
    }
    if let Some(v) = a.lr {
        hp.initial_lr = v;
    }
    if let Some(v) = a.dropout {
        hp.dropout = v;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg.set_seed(seed);
    let layout = Layout::new(cli.out.clone());

    match cli.command {
        Command::Synth(a) => {
            let mut s = dualsearch::synthetic::SyntheticConfig { seed, ..Default::default() };
            s.train_pairs = a.train_pairs.unwrap_or(s.train_pairs);
            s.valid_pairs = a.valid_pairs.unwrap_or(s.valid_pairs);
            s.test_pairs = a.test_pairs.unwrap_or(s.test_pairs);
            s.distractor_pairs = a.distractors.unwrap_or(s.distractor_pairs);
            commands::synth(&s, &layout)
        }
        Command::Preprocess(a) => {
            let d = &mut cfg.data;
            d.train = a.train.or(d.train.take());
            d.valid = a.valid.or(d.valid.take());
            d.test = a.test.or(d.test.take());
            d.inputs.extend(a.input);
            if a.codesearchnet_fields {
                d.fields = dualsearch::corpus::FieldMap::codesearchnet();
            }
            if a.dgms && d.dgms.is_none() {
                d.dgms = Some(Default::default());
            }
            d.preprocess.lowercase |= a.lowercase;
            if let Some(dgms) = &mut d.dgms {
                dgms.preprocess = d.preprocess;
            }
            commands::preprocess(&cfg, &layout)
        }
        Command::TrainEmbed(a) => {
            apply_embed(&mut cfg, &a)?;
            commands::train_embed(&cfg, &layout)
        }
        Command::Train(a) => {
            apply_train(&mut cfg, &a.train)?;
            commands::train(&cfg, &layout, a.resume)
        }
        Command::Eval(a) => {
            if !a.protocol.is_empty() {
                cfg.eval.protocols = a.protocol.into_iter().map(Protocol::from).collect();
            }
            cfg.eval.chunk_size = a.chunk_size.unwrap_or(cfg.eval.chunk_size);
            cfg.eval.similarity_samples = a.samples.or(cfg.eval.similarity_samples);
            commands::eval(&cfg, &layout, a.untrained)
        }
        Command::Query(a) => commands::query(&cfg, &layout, a.text.as_deref(), a.k, a.corpus.as_deref()),
        Command::Sweep(a) => {
            if !a.sizes.is_empty() {
                cfg.eval.sweep_sizes = a.sizes;
            }
            cfg.eval.repeats = a.repeats.unwrap_or(cfg.eval.repeats);
            cfg.eval.protocols = vec![Protocol::Sweep];
            commands::eval(&cfg, &layout, false)
        }
        Command::Stats(a) => commands::stats(&cfg, &layout, a.top),
        Command::Ablate(a) => {
            apply_embed(&mut cfg, &a.embed)?;
            apply_train(&mut cfg, &a.train)?;
            let axes = &mut cfg.ablation;
            if !a.language_models.is_empty() {
                axes.language_models = config::parse_list(&a.language_models)?;
            }
            if !a.losses.is_empty() {
                axes.losses = config::parse_list(&a.losses)?;
            }
            if !a.output_sizes.is_empty() {
                axes.output_sizes = a.output_sizes;
            }
            if !a.pass_counts.is_empty() {
                axes.passes = a.pass_counts;
            }
            commands::ablate(&cfg, &layout)
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Format(_) | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
