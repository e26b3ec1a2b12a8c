mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes with stable exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Failure {
    Usage = 1,
    Data = 2,
    Training = 3,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Failure::Usage => "usage or configuration error",
            Failure::Data => "data error",
            Failure::Training => "training failure",
        })
    }
}

#[derive(Parser)]
#[command(name = "polytone", version, about = "Multilingual multi-speaker TTS on synthetic languages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Run configuration (TOML). Library defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set audio.mel_bins=40`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus: manifests, WAV files, lexicons and the spec used.
    Synthlang(commands::SynthlangArgs),
    /// Fit feature normalizers over the corpus and record the phoneme table.
    Prepare(commands::PrepareArgs),
    /// Pre-train and/or fine-tune with one strategy.
    Train(commands::TrainArgs),
    /// Synthesize a waveform and alignment for any language/speaker pairing.
    Synthesize(commands::SynthesizeArgs),
    /// Nearest cross-lingual phoneme embeddings.
    Analyze(commands::AnalyzeArgs),
    /// Score a checkpoint on unseen sentences with the oracle recognizer.
    Evaluate(commands::EvaluateArgs),
    /// Train and evaluate every strategy at every low-resource size.
    Compare(commands::CompareArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Failure::Usage as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synthlang(a) => commands::synthlang(a),
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Synthesize(a) => commands::synthesize(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<Failure>().copied().unwrap_or(Failure::Data);
            eprintln!("error: {e:#}");
            ExitCode::from(kind as u8)
        }
    }
}
