//! Command-line front end for `connfp`: TOML experiment configs, the matrix
//! container format, and CSV/JSON reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

pub mod cohort_io;
pub mod commands;
pub mod config;
pub mod container;
mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use connfp::fingerprint::RefineTarget;

pub use error::{CliError, CliResult};

use config::{ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "connfp", version, about = "Connectome fingerprinting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort and write one container per subject and session.
    Synth(ConfigArgs),
    /// Identify subjects for every train/test session pair and method.
    Run(ConfigArgs),
    /// Sweep the dictionary size K and sparsity L.
    Grid(ConfigArgs),
    /// Rerun identification with each network excluded in turn.
    Ablate(ConfigArgs),
    /// Print the header of a matrix container.
    Inspect { path: PathBuf },
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_refine_target)]
    refine_target: Option<RefineTarget>,
    #[arg(long)]
    fisher_z: bool,
}

fn parse_refine_target(s: &str) -> Result<RefineTarget, String> {
    s.parse().map_err(|e: connfp::Error| e.to_string())
}

impl ConfigArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let overrides = Overrides {
            seed: self.seed,
            output_dir: self.out.clone(),
            refine_target: self.refine_target,
            fisher_z: self.fisher_z,
        };
        ExperimentConfig::load(&self.config, &overrides)
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a.load()?),
        Command::Run(a) => commands::run(&a.load()?),
        Command::Grid(a) => commands::grid(&a.load()?),
        Command::Ablate(a) => commands::ablate(&a.load()?),
        Command::Inspect { path } => {
            println!("{}", commands::inspect(&path)?);
            Ok(())
        }
    }
}

/// Parse `args` (including the program name), run the command, and return
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
