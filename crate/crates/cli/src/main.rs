//! `dsm-minmax`: design, check and simulate min-max delta-sigma modulators.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "dsm-minmax", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the loop filter and write design.toml, ntf_response.csv, stability.toml.
    Design(Opts),
    /// Run a tone through the modulator; writes trace.csv, spectrum.csv, simulate.toml.
    Simulate(Opts),
    /// SNR against input amplitude; writes sweep.csv and sweep.toml.
    Sweep(Opts),
    /// Stability figures of a stored design; writes stability.toml.
    Stability(Opts),
    /// Re-check a stored design; writes verify.toml, exits 3 on failure.
    Verify(Opts),
}

#[derive(Debug, clap::Args)]
struct Opts {
    /// Flat TOML file with the same keys as the flags (underscored).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (name, opts, cmd): (&str, Opts, fn(&config::Settings) -> Result<(), Failure>) = match cli.command {
        Command::Design(o) => ("design", o, commands::cmd_design),
        Command::Simulate(o) => ("simulate", o, commands::cmd_simulate),
        Command::Sweep(o) => ("sweep", o, commands::cmd_sweep),
        Command::Stability(o) => ("stability", o, commands::cmd_stability),
        Command::Verify(o) => ("verify", o, commands::cmd_verify),
    };
    let file = match &opts.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    let settings = opts.run.or(file).resolve(name).map_err(Failure::Usage)?;
    cmd(&settings)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
