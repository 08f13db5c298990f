//! `vpidm` batch-experiment command line.

pub mod commands;
pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vpidm::corpus::{CleanKind, NoiseKind};
use vpidm::sampler::SamplerMode;
use vpidm::Variant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Io(_) => EXIT_IO,
            Self::Verification(_) | Self::Runtime(_) => EXIT_VERIFY,
        }
    }
}

impl From<vpidm::Error> for CliError {
    fn from(e: vpidm::Error) -> Self {
        use vpidm::Error as E;
        match e {
            E::Io(_) | E::Wav(_) | E::WavFormat { .. } | E::Json(_) | E::RateMismatch(..) => {
                Self::Io(e.to_string())
            }
            E::InvalidConfig(_) | E::ScheduleMismatch { .. } | E::EmptyBatch => Self::Usage(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "vpidm", version, about = "Interpolating diffusion speech enhancement experiments")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// TOML config with [schedule], [stft], [compression], [sampler], [train]
    /// and [corpus] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreKind {
    Oracle,
    Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    EarlyStop,
}

impl From<ModeArg> for SamplerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => SamplerMode::Full,
            ModeArg::EarlyStop => SamplerMode::EarlyStop,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic paired corpus and its manifest.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        /// Comma-separated SNR levels in dB.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        clean_kind: Option<CleanKind>,
        #[arg(long)]
        noise_kind: Option<NoiseKind>,
    },
    /// Train the small score model on a manifest (or the configured corpus).
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Enhance a WAV file or every noisy file of a manifest.
    Enhance {
        #[command(flatten)]
        common: CommonArgs,
        /// Noisy WAV or `.jsonl` manifest.
        #[arg(long = "in")]
        input: PathBuf,
        /// Clean reference for a single WAV input.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "oracle")]
        score: ScoreKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        k1: Option<usize>,
        /// Also write per-step diagnostics CSVs.
        #[arg(long)]
        diagnostics: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean metrics over a corpus for several step counts.
    SweepSteps {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        k_list: Vec<usize>,
        #[arg(long, value_enum, default_value = "oracle")]
        score: ScoreKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coefficient, forward-SDE and score self-checks.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Relative fault injected into the closed-form diffusion coefficient.
        #[arg(long, default_value_t = 0.0)]
        perturb_g: f64,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool already initialised: {e}");
        }
    }
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
