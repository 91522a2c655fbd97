//! Command-line driver for `happymap`. Each command reads one JSON config,
//! writes its artifacts into the output directory and, on failure, removes
//! them again and leaves `error.json` behind.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use log::error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, ErrorRecord};
use crate::output::Outputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "kebab-case")]
pub enum Command {
    /// Fit a chain with an arbitrary family and mapping.
    Fit,
    /// Audit a saved chain (or the bare initial predictor).
    Audit,
    /// One-sided conformal lower bound, or a score interval.
    Conformal,
    /// Two-sided interval from two quantile fits.
    Conformal2,
    /// Quantile fit that is calibrated within value bins.
    Multivalid,
    /// Lower bound that covers under covariate shift.
    ShiftConformal,
    /// Squared-error fit robust to reweighting of the source.
    UniversalL2,
    /// Squared-error fit on data with missing features.
    Missing,
    /// Selection rates equalised across groups.
    Parity,
    /// Write a synthetic dataset and its oracle.
    Synth,
    /// Score saved chains on a dataset.
    Eval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Audit => "audit",
            Command::Conformal => "conformal",
            Command::Conformal2 => "conformal2",
            Command::Multivalid => "multivalid",
            Command::ShiftConformal => "shift-conformal",
            Command::UniversalL2 => "universal-l2",
            Command::Missing => "missing",
            Command::Parity => "parity",
            Command::Synth => "synth",
            Command::Eval => "eval",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "happymap", version, about = "Fit and audit multicalibrated predictors")]
pub struct Cli {
    pub command: Command,
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Fraction of rows held out for evaluation.
    #[arg(long)]
    pub holdout: Option<f64>,
}

fn run(cli: &Cli, out: &mut Outputs) -> CliResult<()> {
    let config = RunConfig::load(&cli.config)?;
    config.validate(cli.command)?;
    let mut ctx = commands::Context {
        command: cli.command,
        config: &config,
        seed: cli.seed,
        holdout: cli.holdout,
        out,
    };
    commands::run(&mut ctx)
}

/// Runs `cli` and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let mut out = Outputs::new(&cli.out);
    match run(cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            out.discard();
            let record = ErrorRecord {
                command: cli.command.name(),
                kind: e.kind(),
                message: e.to_string(),
            };
            if let Err(write) = write_error(&mut out, &record) {
                error!("could not write error.json: {write}");
            }
            1
        }
    }
}

fn write_error(out: &mut Outputs, record: &ErrorRecord<'_>) -> Result<(), CliError> {
    out.write_json("error.json", record)?;
    Ok(())
}
