mod commands;
mod manifest;
mod plot;
mod prompt;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use promptts_core::Error;

pub const CORPUS_ENV: &str = "PROMPTTS_CORPUS";

#[derive(Parser, Debug)]
#[command(name = "promptts", version, about = "Prompt-conditioned source-filter TTS toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic toy corpus.
    Toygen(ToygenArgs),
    /// Extract speaker statistics and acoustic units for a corpus.
    Prepare(PrepareArgs),
    /// Train a model, or resume a run.
    Train(TrainArgs),
    /// Synthesize speech from text and prompts.
    Synth(SynthArgs),
    /// Decode a single generator representation.
    Analyze(AnalyzeArgs),
    /// Compute objective metrics over (output, prompt) pairs.
    Metrics(MetricsArgs),
    /// Summarize a checkpoint or run config.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ToyPreset {
    Default,
    Overfit,
}

#[derive(Args, Debug)]
pub struct ToygenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: ToyPreset,
    /// TOML corpus spec; overrides the preset.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// `natural` or `deterministic`.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub render_audio: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long, env = CORPUS_ENV)]
    pub corpus: PathBuf,
    /// Output directory; defaults to `<corpus>/prepared`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainPreset {
    Desk,
    Overfit,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run config (TOML). Without it, a config is built from the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = CORPUS_ENV)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: TrainPreset,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub no_source_filter: bool,
    #[arg(long)]
    pub no_adaptive_kernels: bool,
    #[arg(long)]
    pub no_film: bool,
    /// Continue from `<out>/latest.ptck`.
    #[arg(long)]
    pub resume: bool,
    /// Accept a checkpoint whose config hash differs.
    #[arg(long, requires = "resume")]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct RequestArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = CORPUS_ENV)]
    pub corpus: Option<PathBuf>,
    /// Space-separated phoneme symbols.
    #[arg(long, conflicts_with = "text_from", required_unless_present = "text_from")]
    pub text: Option<String>,
    /// Take the phonemes of a corpus utterance.
    #[arg(long)]
    pub text_from: Option<String>,
    /// Corpus utterance id, `.wav` file, or mel matrix file.
    #[arg(long)]
    pub speaker_prompt: String,
    #[arg(long)]
    pub style_prompt: Option<String>,
    /// Forbid a separate style prompt.
    #[arg(long, conflicts_with = "style_prompt")]
    pub no_style_transfer: bool,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub duration_offset: i64,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub pitch_offset: i64,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub energy_offset: i64,
    /// Sampling temperature for unit decoding; 0 is greedy.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synth")]
    pub id: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a waveform reconstructed from the mel (listening only).
    #[arg(long)]
    pub render_audio: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub req: RequestArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Coarse,
    FilterOnly,
    SourceOnly,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub req: RequestArgs,
    #[arg(long, value_enum)]
    pub mode: AnalyzeMode,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Directory holding `<name>.out.mel` / `<name>.prompt.mel` pairs, and
    /// optionally `<name>.out.dur` / `<name>.ref.dur` duration files.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Checkpoint for the style-embedding similarity.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Checkpoint (`.ptck`) or run config (TOML).
    pub path: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Usage(_) | Error::Config(_) => 1,
                Error::Numeric(_) => 3,
                Error::Tensor(_) | Error::Io { .. } | Error::Data(_) | Error::Format { .. } => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
