//! The `mdtag` command line: schema building, training, fine-tuning,
//! prediction, evaluation and typology tables.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

pub use commands::{cmd_evaluate, cmd_finetune, cmd_predict, cmd_schema, cmd_train, cmd_typology};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A bad flag, missing input or inconsistent configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Fails with a usage error naming `flag` unless `path` exists.
pub(crate) fn require_path(flag: &str, path: &Path) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!(
            "{flag}: no such file or directory: {}",
            path.display()
        )))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mdtag",
    version,
    about = "Contextual morphological analysis with feature-wise CRF decoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decompose training tagsets and write the resulting label spaces.
    Schema(SchemaArgs),
    /// Train a model and write its checkpoint, log and dev predictions.
    Train(TrainArgs),
    /// Continue training a cluster checkpoint on one member language.
    Finetune(FinetuneArgs),
    /// Tag a CoNLL-U file, replacing its FEATS column.
    Predict(PredictArgs),
    /// Score predicted against gold CoNLL-U.
    Evaluate(EvaluateArgs),
    /// Build the typology table of a language cluster.
    Typology(TypologyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    #[value(name = "mdcrf")]
    Mdcrf,
    #[value(name = "mdcrf+pos")]
    MdcrfPos,
    #[value(name = "multi")]
    Multi,
    #[value(name = "multi+polyglot")]
    MultiPolyglot,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mdcrf => "mdcrf",
            Mode::MdcrfPos => "mdcrf+pos",
            Mode::Multi => "multi",
            Mode::MultiPolyglot => "multi+polyglot",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct DictArgs {
    /// UniMorph value-to-dimension table (`builtin` for the shipped one).
    #[arg(long)]
    pub dict: Option<String>,
    /// Fail on tag values missing from the dictionary.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SchemaArgs {
    #[arg(long = "train", required = true, num_args = 1..)]
    pub train: Vec<PathBuf>,
    #[command(flatten)]
    pub dict: DictArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.015)]
    pub lr: f64,
    #[arg(long = "max-epochs", default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Rescale gradients to this global norm.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long = "min-count", default_value_t = 1)]
    pub min_count: usize,
    #[arg(long = "char-emb", default_value_t = 50)]
    pub char_emb: usize,
    #[arg(long = "char-hidden", default_value_t = 25)]
    pub char_hidden: usize,
    #[arg(long = "word-emb", default_value_t = 100)]
    pub word_emb: usize,
    #[arg(long = "word-hidden", default_value_t = 200)]
    pub word_hidden: usize,
    #[arg(long = "pos-emb", default_value_t = 64)]
    pub pos_emb: usize,
    #[arg(long = "lang-emb-dim", default_value_t = 100)]
    pub lang_emb_dim: usize,
    #[arg(long = "no-self-attention")]
    pub no_self_attention: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "mdcrf")]
    pub mode: Mode,
    /// Shorthand: turns `mdcrf` into `mdcrf+pos`.
    #[arg(long)]
    pub pos: bool,
    /// Shorthand: turns `multi` into `multi+polyglot`.
    #[arg(long)]
    pub polyglot: bool,
    /// Keep the encoder states next to the factored ones.
    #[arg(long = "polyglot-concat")]
    pub polyglot_concat: bool,
    /// Use precomputed typology features instead of corpus-derived ones.
    #[arg(long)]
    pub uriel: Option<PathBuf>,
    /// Add a language embedding to every token (on by default in cluster modes).
    #[arg(long = "lang-emb")]
    pub lang_emb: bool,
    #[arg(long = "no-lang-emb", conflicts_with = "lang_emb")]
    pub no_lang_emb: bool,
    #[arg(long = "no-sentinels")]
    pub no_sentinels: bool,
    /// Train the analyzer on gold rather than predicted POS.
    #[arg(long = "gold-pos-training")]
    pub gold_pos_training: bool,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Language id of monolingual inputs.
    #[arg(long, default_value = "und")]
    pub lang: String,
    #[arg(long)]
    pub cluster: Option<PathBuf>,
    /// Cluster to train when the file defines several.
    #[arg(long = "cluster-name")]
    pub cluster_name: Option<String>,
    #[arg(long = "cluster-cap", default_value_t = mdtag::corpus::CLUSTER_CAP)]
    pub cluster_cap: usize,
    #[command(flatten)]
    pub dict: DictArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub lang: String,
    #[command(flatten)]
    pub dict: DictArgs,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.015)]
    pub lr: f64,
    #[arg(long = "max-epochs", default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output CoNLL-U file.
    #[arg(long)]
    pub out: PathBuf,
    /// Language id of the input; defaults to the checkpoint's only language.
    #[arg(long)]
    pub lang: Option<String>,
    /// Write one character-attention trace per sentence into this directory.
    #[arg(long)]
    pub attention: Option<PathBuf>,
    /// Write the transition table of every feature decoder into this directory.
    #[arg(long)]
    pub transitions: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Dictionary for per-feature counts (default: the shipped one).
    #[arg(long)]
    pub dict: Option<String>,
    #[arg(long = "per-feature")]
    pub per_feature: bool,
    /// Also write the report as key/value lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TypologyArgs {
    #[arg(long)]
    pub cluster: PathBuf,
    #[arg(long = "cluster-name")]
    pub cluster_name: Option<String>,
    #[command(flatten)]
    pub dict: DictArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for an error chain: usage and configuration problems give 2,
/// everything else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(mdtag::Error::Config(_)) = cause.downcast_ref::<mdtag::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_RUNTIME
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Schema(a) => cmd_schema(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Finetune(a) => cmd_finetune(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Typology(a) => cmd_typology(&a),
    }
}

/// Parses `args` (program name first) and runs the command, printing any
/// diagnostic to stderr. Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
