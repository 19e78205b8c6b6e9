mod config;
mod decompose;
mod manifest;
mod melly;
mod prep;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dr-decomp", version, about = "Distribution-regression decompositions of distributional change")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an analysis dataset from household, vehicle and housing files.
    Prep(Common),
    /// Sequential covariate-block and structure decomposition with bootstrap bands.
    Decompose(Common),
    /// Quantile-regression decomposition into coefficients, characteristics and residuals.
    Melly(Common),
    /// Generate data from a known process and check the pipeline against its oracles.
    Simulate(Common),
}

/// Positional config plus scalar overrides.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML configuration file.
    pub config: PathBuf,
    /// Bootstrap or simulation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bootstrap replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// logit, probit, cloglog, cauchit or linear_probability.
    #[arg(long)]
    pub link: Option<String>,
    /// `all` for every distinct outcome, or a number of quantile-spaced thresholds.
    #[arg(long)]
    pub grid: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Prep(c) => prep::run(c),
        Command::Decompose(c) => decompose::run(c),
        Command::Melly(c) => melly::run(c),
        Command::Simulate(c) => simulate::run(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
