//! `subrank` command-line driver: dataset conversion, candidate ranking,
//! attribution dumps, GAP evaluation and the weighting-scheme ablation.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use subrank_core::data::PoolMode;

pub use config::{RunArgs, RunConfig};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    /// Some instances failed; the rest were written.
    Partial = 1,
    /// Usage or input error; nothing usable was produced.
    Usage = 2,
}

#[derive(Debug, Parser)]
#[command(
    name = "subrank",
    version,
    about = "Rank lexical substitution candidates by weighted contextual similarity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an LS07 or SWORDS release into canonical JSONL.
    Convert(ConvertArgs),
    /// Rank the candidates of every instance in a canonical file.
    Rank(RunArgs),
    /// Score a rankings file against canonical gold with GAP.
    Evaluate(EvaluateArgs),
    /// Dump per-token weights for one sentence and target span.
    Attribute(AttributeArgs),
    /// Run all weighting schemes and both target variants and report mean GAP.
    Ablate(AblateArgs),
    /// Write a seeded synthetic corpus in canonical form.
    Synth(SynthArgs),
    /// Write the vocabulary derived from a canonical file.
    BuildVocab(BuildVocabArgs),
    /// Write seeded reference-encoder weights to a file.
    Init(InitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Ls07,
    Swords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Lemma,
    LemmaPos,
    None,
}

impl PoolArg {
    pub fn mode(self) -> Option<PoolMode> {
        match self {
            PoolArg::Lemma => Some(PoolMode::Lemma),
            PoolArg::LemmaPos => Some(PoolMode::LemmaPos),
            PoolArg::None => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long, value_enum)]
    pub kind: DatasetKind,
    /// LS07 context XML files (trial and test may both be given) or one SWORDS JSON file.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// LS07 gold files.
    #[arg(long, num_args = 1..)]
    pub gold: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Candidate pooling; lemma-pos for LS07 and none for SWORDS by default.
    #[arg(long, value_enum)]
    pub pool: Option<PoolArg>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Rankings JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Canonical file holding the gold annotations.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Count gold instances without a ranking as skipped instead of failing.
    #[arg(long)]
    pub allow_missing: bool,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub sentence: String,
    /// Target character span, START:END.
    #[arg(long)]
    pub span: String,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Size of the seeded synthetic corpus used when --in is absent (default 50).
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = config::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

/// Run a parsed command line. Errors are reported on stderr and map to
/// [`Status::Usage`].
pub fn run(cli: &Cli) -> Status {
    let result = match &cli.command {
        Command::Convert(a) => commands::cmd_convert(a),
        Command::Rank(a) => commands::cmd_rank(a),
        Command::Evaluate(a) => commands::cmd_evaluate(a),
        Command::Attribute(a) => commands::cmd_attribute(a),
        Command::Ablate(a) => commands::cmd_ablate(a),
        Command::Synth(a) => commands::cmd_synth(a),
        Command::BuildVocab(a) => commands::cmd_build_vocab(a),
        Command::Init(a) => commands::cmd_init(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        Status::Usage
    })
}
