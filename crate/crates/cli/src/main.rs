//! `defx` — prepare data, train, cross-validate, predict, and rank errors
//! for the definition-sentence classifier.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(defx_core::Error),
}

impl From<defx_core::Error> for CliError {
    fn from(e: defx_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(defx_core::Error::NonFinite { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "defx",
    version,
    about = "Definition-sentence classification: text-level GCN, transformer encoder, joint model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a dataset TSV: strip leading line numbers, optionally
    /// prepend the textbook subject token.
    Prepare(PrepareArgs),
    /// Train one model and save it as a reusable bundle.
    Train(TrainArgs),
    /// Stratified k-fold cross-validation, optionally with ensemble test
    /// predictions.
    Cv(CvArgs),
    /// Predict labels for sentences with a trained model bundle.
    Predict(PredictArgs),
    /// Rank examples by descending cross-entropy loss.
    Errors(ErrorsArgs),
}

/// Hyperparameter and resource flags shared by `train` and `cv`. Values
/// resolve as defaults < DEFX_SEED < --config file < --set < named flags.
#[derive(Args, Debug)]
pub struct ModelFlags {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model kind: gcn_only, encoder_only, or joint.
    #[arg(long)]
    pub model: Option<String>,
    /// Encoder source: toy or precomputed.
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Graph window size n.
    #[arg(long)]
    pub window: Option<usize>,
    /// Pretrained word vectors (GloVe text layout) for the GCN branch.
    /// Without this, a corpus vocabulary with seeded random vectors is used.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Precomputed CLS feature file (required with --encoder precomputed).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Additional config overrides, repeatable: --set enc.layers=3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Sidecar TSV mapping `filename<TAB>subject`.
    #[arg(long)]
    subjects: Option<PathBuf>,
    /// Prepend the subject token to every sentence.
    #[arg(long)]
    add_subject: bool,
    /// Subject for every sentence in the input (overrides the sidecar).
    #[arg(long)]
    subject: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training TSV (`sentence<TAB>label`).
    #[arg(long)]
    input: PathBuf,
    /// Optional validation TSV evaluated after the final epoch.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Directory to write the trained model bundle into.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Metrics JSON path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    input: PathBuf,
    /// Number of folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Parallel fold workers; 1 is fully serial.
    #[arg(long)]
    jobs: Option<usize>,
    /// Metrics JSON path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Test set for the probability-mean ensemble prediction.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Output TSV (`sentence<TAB>label`) for test predictions.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Audit dump of fold validation ids.
    #[arg(long)]
    fold_dump: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model bundle directory.
    #[arg(long)]
    model: PathBuf,
    /// Sentences to classify; labeled or bare, one per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Precomputed CLS feature file (for bundles trained on one).
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct ErrorsArgs {
    /// Trained model bundle directory.
    #[arg(long)]
    model: PathBuf,
    /// Labeled TSV to analyze.
    #[arg(long)]
    input: PathBuf,
    /// Keep the top N rows by loss.
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    output: PathBuf,
    /// Precomputed CLS feature file (for bundles trained on one).
    #[arg(long)]
    features: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Prepare(args) => commands::prepare::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Cv(args) => commands::cv::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Errors(args) => commands::errors::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
