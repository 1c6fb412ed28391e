//! Command-line front end: corpus statistics, training, prediction,
//! scoring, ablation grids, synthetic data and the classic CRF baseline.

pub mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use manifest::{RunManifest, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nerlab", version, about = "Named-entity recognition heads over frozen encoder embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics: sentence counts, length histogram, tag frequencies
    Eda(EdaArgs),
    /// Train a head on a tagged corpus and its embeddings
    Train(TrainArgs),
    /// Tag a corpus with a trained checkpoint
    Predict(PredictArgs),
    /// Score predictions against gold annotations
    Eval(EvalArgs),
    /// Train and score every row of an ablation grid
    Ablate(AblateArgs),
    /// Generate a synthetic tagged corpus and matching embeddings
    Synth(SynthArgs),
    /// Train the feature-template CRF baseline
    ClassicTrain(ClassicTrainArgs),
    /// Tag a corpus with a feature-template CRF model
    ClassicPredict(ClassicPredictArgs),
}

#[derive(Debug, Args)]
pub struct SchemaArg {
    /// Label schema JSON (fine types, coarse types, fine-to-coarse map); built-in MultiCoNER II schema when omitted
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EdaArgs {
    /// CoNLL corpus file; repeat to pool several files
    #[arg(long, value_name = "PATH", required = true)]
    pub corpus: Vec<PathBuf>,
    /// Validate tags against this schema JSON
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
    /// Zero-based column holding POS tags
    #[arg(long, value_name = "N")]
    pub pos_column: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Tagged CoNLL training corpus
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// SEQEMB01 embeddings for the corpus
    #[arg(long, value_name = "PATH")]
    pub embeddings: PathBuf,
    /// Training config JSON
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Override the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// CoNLL corpus to tag (tags, if any, are ignored)
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// SEQEMB01 embeddings for the corpus
    #[arg(long, value_name = "PATH")]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MacroOverArg {
    /// Types present in gold or predictions
    Observed,
    /// Every fine type of the schema
    Schema,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold CoNLL file
    #[arg(long, value_name = "PATH")]
    pub gold: PathBuf,
    /// Predicted CoNLL file
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    /// Types averaged by the macro F1
    #[arg(long, value_enum, default_value_t = MacroOverArg::Observed)]
    pub macro_over: MacroOverArg,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Grid JSON: a base training config plus per-row overrides
    #[arg(long, value_name = "PATH")]
    pub grid: PathBuf,
    /// Tagged CoNLL training corpus
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// SEQEMB01 embeddings for the training corpus
    #[arg(long, value_name = "PATH")]
    pub embeddings: PathBuf,
    /// Tagged evaluation corpus; the training corpus when omitted
    #[arg(long, value_name = "PATH", requires = "dev_embeddings")]
    pub dev_corpus: Option<PathBuf>,
    /// SEQEMB01 embeddings for the evaluation corpus
    #[arg(long, value_name = "PATH", requires = "dev_corpus")]
    pub dev_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Override the seed of every row
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; each row writes into its own subdirectory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbeddingModeArg {
    /// Independent random vector per word and layer
    Random,
    /// Entity-type prototype plus word noise
    Prototype,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of sentences
    #[arg(long, default_value_t = 50)]
    pub sentences: usize,
    /// Corpus and embedding seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Embedding width per layer
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Number of embedding layers
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// How vectors relate to words and tags
    #[arg(long, value_enum, default_value_t = EmbeddingModeArg::Random)]
    pub mode: EmbeddingModeArg,
    /// Word-noise scale for prototype mode
    #[arg(long, default_value_t = 0.5)]
    pub noise: f32,
    /// Use only the first N fine types of the schema
    #[arg(long, value_name = "N")]
    pub types: Option<usize>,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassicTrainArgs {
    /// Tagged CoNLL training corpus
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Classic CRF config JSON (lambda, epochs, lr, features); defaults when omitted
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Zero-based column holding POS tags
    #[arg(long, value_name = "N")]
    pub pos_column: Option<usize>,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassicPredictArgs {
    /// Model written by `classic-train`
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// CoNLL corpus to tag
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Zero-based column holding POS tags
    #[arg(long, value_name = "N")]
    pub pos_column: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Exit code for a library error: configuration problems are usage errors,
/// numeric failures get their own code, everything else is a data error.
pub fn exit_code(err: &nerlab::Error) -> i32 {
    match err {
        nerlab::Error::Config(_) => EXIT_USAGE,
        nerlab::Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{rendered}")
            } else {
                write!(stdout, "{rendered}")
            };
            return code;
        }
    };
    let raw: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(&cli.command, &raw, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
