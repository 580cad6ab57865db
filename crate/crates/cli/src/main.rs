//! Command-line front end for all-at-once nonlinearity identification.

mod commands;
mod error;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "aao",
    version,
    about = "Identify the nonlinearity of a reaction-diffusion equation from data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts and the fitted surrogate.
    Solve(Common),
    /// Run one experiment or a JSON array of experiments.
    Experiment(Common),
    /// Score a grid of objective weights around a base experiment.
    Gridsearch(Common),
    /// Lipschitz constants and cone-condition radius of a network.
    Certify(CertifyArgs),
    /// Adjoint pairings and gradient finite differences on random inputs.
    AdjointCheck(CheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Replace the seed of every configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, short)]
    pub jobs: Option<usize>,
    /// Write fields in the binary format instead of CSV.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Certification settings; defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// A `surrogate.json` written by `solve`, or a bare network file.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub jobs: Option<usize>,
}

fn init_jobs(jobs: Option<usize>) {
    if let Some(j) = jobs {
        aao_core::par::init_threads(j);
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve(a) => {
            init_jobs(a.jobs);
            commands::solve(&a)
        }
        Command::Experiment(a) => {
            init_jobs(a.jobs);
            commands::experiment(&a)
        }
        Command::Gridsearch(a) => {
            init_jobs(a.jobs);
            commands::gridsearch(&a)
        }
        Command::Certify(a) => commands::certify(&a),
        Command::AdjointCheck(a) => {
            init_jobs(a.jobs);
            commands::adjoint_check(&a)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AAO_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
