use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "obscorr",
    version,
    about = "Correlated observation-error covariance experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Observation file (CSV).
    #[arg(long, global = true)]
    pub obs: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for replicate-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// Also compute normalisation factors by brute force and report the error
    /// of the spaced-impulse estimate.
    #[arg(long, global = true)]
    pub exact_normalization: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// AR correlation functions and their spectra.
    Kernel,
    /// Scale decomposition of the analysis for circulant covariances.
    Spectrum,
    /// Suboptimal-to-optimal analysis-error variance ratio surface.
    RatioSurface,
    /// Normalisation factors of the diffusion operator on observation tracks.
    Normalize,
    /// Background- and observation-error samples.
    Sample,
    /// Twin experiments with simulated innovations.
    Assimilate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Kernel => commands::kernel(&cli.common),
        Command::Spectrum => commands::spectrum(&cli.common),
        Command::RatioSurface => commands::ratio_surface(&cli.common),
        Command::Normalize => commands::normalize(&cli.common),
        Command::Sample => commands::sample(&cli.common),
        Command::Assimilate => commands::assimilate(&cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
