//! `eploop` — resonance spectra and exceptional-point population transfer
//! for hydrogen in parallel electric and magnetic fields.
//!
//! Subcommands: `spectrum` (resonance tables, optionally along a loop),
//! `fit` (2x2 model coefficients and EP location), `propagate` (population
//! traces along one loop), `sweep` (transfer over T, r, rT, or phi0 grids).
//! Every run writes a `run_manifest.txt` that doubles as a re-runnable
//! configuration.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{EngineKind, RunConfig, SweepAxis};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or command line (exit code 2).
    Config(String),
    /// Numerical failure (exit code 3).
    Numerical(String),
    /// Some sweep points failed but the run completed (exit code 4).
    PartialSweep(usize),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::PartialSweep(n) => write!(f, "{n} sweep point(s) failed"),
        }
    }
}

impl From<eploop::Error> for CliError {
    fn from(e: eploop::Error) -> Self {
        CliError::Numerical(format!("{e}"))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::PartialSweep(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "eploop", version, about = "Exceptional-point population transfer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file (sectioned key = value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the propagation engine.
    #[arg(long, global = true, value_parser = ["full", "two-level"])]
    engine: Option<String>,
    /// Worker threads for sweep grids (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Resonance table at the configured field point (or along the loop).
    Spectrum,
    /// Fit the 2x2 model on an octagon and locate the EP.
    Fit,
    /// Propagate the configured loop and write the population trace.
    Propagate,
    /// Sweep the transfer over a parameter grid.
    Sweep {
        /// Sweep axis override: T | r | rT | phi0.
        #[arg(long)]
        axis: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(engine) = &cli.engine {
        cfg.engine = match engine.as_str() {
            "full" => EngineKind::Full,
            _ => EngineKind::TwoLevel,
        };
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        cfg.directory = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<(), CliError> {
        let mut cfg = load_config(&cli)?;
        if cfg.jobs > 0 {
            // ignore failure: the pool may already exist in tests
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
        }
        match &cli.command {
            Command::Spectrum => commands::spectrum(&cfg),
            Command::Fit => commands::fit(&cfg),
            Command::Propagate => commands::propagate(&cfg),
            Command::Sweep { axis } => {
                if let Some(axis) = axis {
                    cfg.axis = SweepAxis::parse(axis).ok_or_else(|| {
                        CliError::Config(format!("--axis must be T|r|rT|phi0, got `{axis}`"))
                    })?;
                }
                commands::sweep(&cfg)
            }
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eploop: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
