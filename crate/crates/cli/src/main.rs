mod commands;
mod inspect;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

/// Audio-driven toy video diffusion: corpus synthesis, training, chunked
/// long-video generation and evaluation.
#[derive(Debug, Parser)]
#[command(name = "avatar", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Debug, Args, Default, Clone)]
pub struct Opts {
    /// JSON configuration file; relative paths inside it resolve against its directory
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed overriding the configuration's
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training steps (train) or denoising steps (generate, eval)
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Training mode: frozen_dit, full or lora
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Text guidance scale
    #[arg(long, global = true)]
    pub cfg_text: Option<f64>,
    /// Audio guidance scale
    #[arg(long, global = true)]
    pub cfg_audio: Option<f64>,
    /// Latent frames per inference chunk
    #[arg(long, global = true)]
    pub chunk_s: Option<usize>,
    /// Latent frames shared between consecutive chunks
    #[arg(long, global = true)]
    pub overlap_f: Option<usize>,
    /// Worker threads; computation is single-threaded either way
    #[arg(long, global = true, value_enum, default_value_t = Threads::One)]
    pub threads: Threads,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Threads {
    #[default]
    #[value(name = "1")]
    One,
    Auto,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpus tools
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// Train from a corpus (mode frozen_dit, full or lora)
    Train {
        /// Continue from the state saved in --out
        #[arg(long)]
        resume: bool,
    },
    /// Generate a long video from a waveform and a reference frame
    Generate,
    /// Score a checkpoint on the corpus test split
    Eval,
    /// Check analytic gradients against finite differences
    Gradcheck,
    /// Summarize a tensor, WAV, checkpoint, corpus or report
    Inspect { path: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum CorpusAction {
    /// Write a synthetic paired audio/video corpus
    Gen,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
