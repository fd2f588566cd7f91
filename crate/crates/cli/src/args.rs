use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcpl::decomp::{DecompositionKind, Term};
use dcpl::indicators::{Decoding, Indicator};
use dcpl::model::{Activation, BeamOptions};
use dcpl::stats::{Pairing, PermutationMode, DEFAULT_ENUMERATION_CAP};

#[derive(Debug, Parser)]
#[command(name = "dcpl", version, about = "Decompose decoder embeddings and track them across checkpoints")]
pub struct Cli {
    /// Worker threads for per-sentence work (DCPL_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a randomly initialized toy model.
    InitModel(InitModelArgs),
    /// Write checkpoints on the straight line between two models.
    Interpolate(InterpolateArgs),
    /// Decode a corpus and write the outputs as JSON lines.
    Translate(TranslateArgs),
    /// Write every decomposition term vector as JSON lines.
    Decompose(DecomposeArgs),
    /// Check exact reconstruction for every token of a corpus.
    Verify(VerifyArgs),
    /// Per-token indicator values and their corpus means.
    Indicators(IndicatorsArgs),
    /// Indicator corpus means across checkpoints of one or more runs.
    Series(SeriesArgs),
    /// Score decoded outputs of every checkpoint.
    Score(ScoreArgs),
    /// Dynamic time warping distances between indicator series.
    Dtw(DtwArgs),
    /// Pitman permutation test between two groups.
    Permtest(PermtestArgs),
    /// Correlate indicator and score changes across checkpoints.
    CorrelateCorpus(CorrelateCorpusArgs),
    /// Correlate per-sentence indicator and score changes.
    CorrelateSentence(CorrelateSentenceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Forced,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeriesMode {
    Forced,
    Beam,
    Both,
}

impl SeriesMode {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            SeriesMode::Forced => vec![Mode::Forced],
            SeriesMode::Beam => vec![Mode::Beam],
            SeriesMode::Both => vec![Mode::Forced, Mode::Beam],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecompChoice {
    Sl,
    Tok,
    Both,
}

impl DecompChoice {
    pub fn kinds(self) -> Vec<DecompositionKind> {
        match self {
            DecompChoice::Sl => vec![DecompositionKind::Sl],
            DecompChoice::Tok => vec![DecompositionKind::Tok],
            DecompChoice::Both => vec![DecompositionKind::Sl, DecompositionKind::Tok],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairingArg {
    Paired,
    Random,
}

impl From<PairingArg> for Pairing {
    fn from(p: PairingArg) -> Self {
        match p {
            PairingArg::Paired => Pairing::Paired,
            PairingArg::Random => Pairing::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PermModeArg {
    Exact,
    MonteCarlo,
}

impl From<PermModeArg> for PermutationMode {
    fn from(m: PermModeArg) -> Self {
        match m {
            PermModeArg::Exact => PermutationMode::Exact,
            PermModeArg::MonteCarlo => PermutationMode::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Chrf,
    Bleu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Corpus,
    Sentence,
}

/// Beam search settings shared by every decoding subcommand.
#[derive(Debug, Clone, Args)]
pub struct BeamArgs {
    #[arg(long, default_value_t = 12)]
    pub beam: usize,
    /// Maximum generated tokens, end-of-sequence included.
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    /// Length-penalty exponent.
    #[arg(long, default_value_t = 1.0)]
    pub length_norm: f64,
    /// Only allow end-of-sequence at the last step.
    #[arg(long)]
    pub force_eos: bool,
}

impl BeamArgs {
    pub fn options(&self) -> BeamOptions {
        BeamOptions {
            beam: self.beam,
            max_len: self.max_len,
            length_norm: self.length_norm,
            force_eos: self.force_eos,
        }
    }

    pub fn decoding(&self, mode: Mode) -> Decoding {
        match mode {
            Mode::Forced => Decoding::Forced,
            Mode::Beam => Decoding::Beam(self.options()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InitModelArgs {
    /// Decoder layers.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Encoder layers (defaults to --layers).
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Feed-forward width (defaults to 2 * dim).
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub vocab: usize,
    #[arg(long, default_value = "swish")]
    pub activation: Activation,
    #[arg(long, default_value_t = 64)]
    pub max_positions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spread of random biases and gains around 0 and 1.
    #[arg(long, default_value_t = 0.1)]
    pub affine_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub to: PathBuf,
    /// Number of checkpoints, endpoints included.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Output directory for ckpt-NNN.dcpl files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "beam")]
    pub mode: Mode,
    #[command(flatten)]
    pub beam: BeamArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "sl")]
    pub decomp: DecompositionKind,
    #[arg(long, value_enum, default_value = "forced")]
    pub mode: Mode,
    #[command(flatten)]
    pub beam: BeamArgs,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_a: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol_r: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub decomp: DecompChoice,
    #[arg(long, value_enum, default_value = "forced")]
    pub mode: Mode,
    #[command(flatten)]
    pub beam: BeamArgs,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_a: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol_r: f64,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IndicatorsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "sl")]
    pub decomp: DecompositionKind,
    #[arg(long, value_enum, default_value = "forced")]
    pub mode: Mode,
    #[command(flatten)]
    pub beam: BeamArgs,
    /// Restrict to these terms (repeatable).
    #[arg(long)]
    pub term: Vec<Term>,
    /// Restrict to these indicators (repeatable).
    #[arg(long)]
    pub indicator: Vec<Indicator>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SeriesArgs {
    /// Comma-separated checkpoints of one run, in training order (repeat for more runs).
    #[arg(long, required = true)]
    pub models: Vec<String>,
    /// Run names, one per --models (default run-1, run-2, ...).
    #[arg(long)]
    pub name: Vec<String>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "sl")]
    pub decomp: DecompositionKind,
    #[arg(long, value_enum, default_value = "forced")]
    pub mode: SeriesMode,
    #[command(flatten)]
    pub beam: BeamArgs,
    #[arg(long)]
    pub term: Vec<Term>,
    #[arg(long)]
    pub indicator: Vec<Indicator>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Comma-separated checkpoints in training order; numbered from 1.
    #[arg(long)]
    pub models: String,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub beam: BeamArgs,
    #[arg(long, value_enum, default_value = "chrf")]
    pub metric: Metric,
    #[arg(long, value_enum, default_value = "corpus")]
    pub granularity: GranularityArg,
    /// Add-one smoothing of BLEU precisions above unigrams.
    #[arg(long)]
    pub smoothing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DtwArgs {
    /// Series CSV (repeatable).
    #[arg(long, required = true)]
    pub series: Vec<PathBuf>,
    #[arg(long)]
    pub decomp: Option<DecompositionKind>,
    #[arg(long)]
    pub term: Vec<Term>,
    #[arg(long)]
    pub indicator: Vec<Indicator>,
    /// Output directory for dtw.csv and heatmap.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PermtestArgs {
    /// Comma-separated values of the first group.
    #[arg(long, allow_hyphen_values = true)]
    pub group_a: String,
    #[arg(long, allow_hyphen_values = true)]
    pub group_b: String,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: PermModeArg,
    #[arg(long, default_value_t = 100_000)]
    pub draws: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest number of assignments exact mode will enumerate.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    pub cap: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateCorpusArgs {
    /// Series CSV (repeatable); each model in it is one run.
    #[arg(long, required = true)]
    pub series: Vec<PathBuf>,
    /// Corpus-level score CSV, one per run in order (repeatable).
    #[arg(long, required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long, default_value = "sl")]
    pub decomp: DecompositionKind,
    #[arg(long)]
    pub term: Term,
    #[arg(long)]
    pub indicator: Indicator,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint pairs per run (default: all).
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long, value_enum, default_value = "paired")]
    pub pairing: PairingArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateSentenceArgs {
    /// Per-sentence indicator CSV (repeatable); each model in it is one run.
    #[arg(long, required = true)]
    pub indicators: Vec<PathBuf>,
    /// Sentence-level score CSV, one per run in order (repeatable).
    #[arg(long, required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long, default_value = "sl")]
    pub decomp: DecompositionKind,
    #[arg(long)]
    pub term: Term,
    #[arg(long)]
    pub indicator: Indicator,
    #[arg(long, default_value_t = 3000)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "paired")]
    pub pairing: PairingArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
