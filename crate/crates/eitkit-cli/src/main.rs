//! `eitkit` — command-line front end for the impedance tomography toolkit.
//!
//! Six subcommands cover the library surface: `converge` (manufactured-
//! solution convergence study), `forward` (one forward solve), `synth`
//! (noisy synthetic measurement data), `denoise` (total-variation
//! denoising of a value grid), `reconstruct` (multi-level regularized
//! conductivity reconstruction), and `grad-check` (finite-difference
//! probe of the misfit gradient).
//!
//! Every run reads an optional `key=value` config file, writes CSV
//! artifacts plus a `manifest.txt` (resolved configuration, crate
//! versions, timings) under `--out`, and never touches its inputs. Exit
//! codes: 0 success, 1 usage error, 2 numerical failure.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use config::Config;
use std::path::PathBuf;

/// Command outcome that is not a success: a configuration mistake the
/// caller can fix (exit 1) or a numerical failure (exit 2).
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; actionable by the caller.
    Usage(String),
    /// The computation itself failed or missed its quality gate.
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Numerical(msg) => f.write_str(msg),
        }
    }
}

impl From<eitkit::Error> for CliError {
    fn from(e: eitkit::Error) -> CliError {
        match &e {
            // Impossible layouts and rejected model inputs trace back to
            // the configuration; solver breakdowns do not.
            eitkit::Error::Layout(_) | eitkit::Error::InvalidInput(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "eitkit",
    version,
    about = "Impedance tomography toolkit: forward solves, data synthesis, TV denoising, and regularized reconstruction"
)]
struct Cli {
    /// Run configuration file (key=value lines, # comments).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for CSV artifacts and the run manifest.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Override the configured random seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Cap on worker threads (default: all available cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence study on refined meshes
    Converge,
    /// Forward solve of one conductivity under trigonometric currents
    Forward,
    /// Synthetic measurement data with seeded relative noise
    Synth,
    /// Total-variation denoising of a CSV value grid
    Denoise,
    /// Multi-level regularized conductivity reconstruction
    Reconstruct,
    /// Finite-difference check of the adjoint misfit gradient
    GradCheck,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::empty(),
    };
    match cli.command {
        Command::Converge => commands::converge(cfg, &cli.out),
        Command::Forward => commands::forward(cfg, &cli.out),
        Command::Synth => commands::synth(cfg, &cli.out, cli.seed),
        Command::Denoise => commands::denoise(cfg, &cli.out),
        Command::Reconstruct => commands::run_reconstruct(cfg, &cli.out, cli.seed),
        Command::GradCheck => commands::grad_check(cfg, &cli.out, cli.seed),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and succeed; real parse
            // errors go to stderr and exit as usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    });
}
