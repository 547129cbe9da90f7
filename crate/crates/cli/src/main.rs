//! `cgspec`: command-line front end over the coarse-grained fluorescence
//! library. Parses a TOML run configuration, dispatches one subcommand, and
//! writes CSV tables plus directly generated SVG plots into the output
//! directory. Errors leave as a single machine-readable JSON line on stderr;
//! exit codes are 0 (ok), 1 (error), 2 (validation suite failed).

mod commands;
mod config;
mod plot;
mod table;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// A fatal CLI error with a machine-readable kind.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: "config", message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { kind: "io", message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind, "message": self.message } }).to_string()
    }
}

impl From<cgspec::Error> for CliError {
    fn from(e: cgspec::Error) -> Self {
        let kind = match e {
            cgspec::Error::Config(_) => "config",
            cgspec::Error::Numerics(_) => "compute",
            cgspec::Error::Consistency(_) => "consistency",
        };
        CliError { kind, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(
    name = "cgspec",
    version,
    about = "Coarse-grained fluorescence spectra and line pulling for hydrogen 2S–4P"
)]
struct Cli {
    /// TOML run configuration; omitted, the built-in defaults apply.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for CSV and SVG files (default from the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads; defaults to $CGSPEC_THREADS, then all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Override the cross-damping interference toggle. A pulling sweep always
    /// references the toggled-off scan, so "off" here is the null test.
    #[arg(long, global = true, value_name = "on|off", value_parser = parse_on_off)]
    toggle_cross_damping: Option<bool>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the damping matrix, its static comparison, and shift estimates.
    Coeffs,
    /// Sweep the laser detuning and write the fluorescence spectrum.
    Spectrum,
    /// Sweep a detection-geometry family and write line-pulling curves.
    PullingSweep,
    /// Sweep the coarse-graining time and write the normalized max pulling.
    TaucSweep,
    /// Run the built-in cross-check suite and print one line per check.
    Validate,
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected \"on\" or \"off\", got {other:?}")),
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("CGSPEC_THREADS") {
            Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| {
                CliError::config(format!("CGSPEC_THREADS must be a positive integer, got {s:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::config("threads: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.display().to_string();
    }
    cfg.validate()?;
    init_threads(cli.threads)?;
    match cli.command {
        Command::Coeffs => commands::coeffs(&cfg, cli.toggle_cross_damping)?,
        Command::Spectrum => commands::spectrum(&cfg, cli.toggle_cross_damping)?,
        Command::PullingSweep => commands::pulling_sweep(&cfg, cli.toggle_cross_damping)?,
        Command::TaucSweep => commands::tauc_sweep(&cfg, cli.toggle_cross_damping)?,
        Command::Validate => return commands::validate(),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
