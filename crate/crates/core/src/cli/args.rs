use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

use super::config::{Mode, RunConfig};
use super::runner::{run, RunOptions, RunSummary};

#[derive(Debug, Parser)]
#[command(name = "noisy-ite", version, about = "Noisy imaginary-time evolution of the transverse-field Ising chain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dense density-matrix evolution to the steady state.
    RunDm(RunArgs),
    /// DMRG steady states at individual points.
    DmrgPoint(RunArgs),
    /// Binder cumulant curves per size with crossing, drift and collapse analysis.
    BinderSweep(RunArgs),
    /// Crossing of the two largest sizes as a function of the noise rate.
    PhaseBoundary(RunArgs),
    /// Overlap of noisy and noiseless steady states.
    FidelityScan(RunArgs),
    /// Distance between one noisy cycle and the exponentiated ladder Hamiltonian.
    ConsistencyCheck(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (overrides the config).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Keep rows already present for the same config hash.
    #[arg(long)]
    pub resume: bool,
    /// Suppress per-point progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

impl Command {
    pub fn mode(&self) -> Mode {
        match self {
            Command::RunDm(_) => Mode::DmEvolve,
            Command::DmrgPoint(_) => Mode::DmrgPoint,
            Command::BinderSweep(_) => Mode::BinderSweep,
            Command::PhaseBoundary(_) => Mode::PhaseBoundary,
            Command::FidelityScan(_) => Mode::FidelityScan,
            Command::ConsistencyCheck(_) => Mode::ConsistencyCheck,
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::RunDm(a)
            | Command::DmrgPoint(a)
            | Command::BinderSweep(a)
            | Command::PhaseBoundary(a)
            | Command::FidelityScan(a)
            | Command::ConsistencyCheck(a) => a,
        }
    }
}

/// Loads the config, checks it against the subcommand and runs it.
pub fn execute(cli: &Cli) -> Result<RunSummary> {
    let mode = cli.command.mode();
    let args = cli.command.args();
    let mut config = RunConfig::from_path(&args.config)?;
    match config.mode {
        None => config.mode = Some(mode),
        Some(m) if m != mode => {
            return Err(Error::Config(format!(
                "mode: config says {m} but the subcommand runs {mode}"
            )))
        }
        Some(_) => {}
    }
    run(
        config,
        &RunOptions {
            out: args.out.clone(),
            workers: args.workers,
            resume: args.resume,
            progress: !args.quiet,
        },
    )
}
