//! Binary entry point: argument parsing, thread pool setup, exit codes.
//!
//! Exit codes: 0 for any completed run (check the `status:` line for
//! flags), 2 for validation problems, 3 for numerical failures. The
//! `BILMOR_THREADS` environment variable caps the worker pool; unset
//! means one worker per core.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bilmor_cli::{commands, Command, RunConfig, RunError};

/// Interpolatory model reduction for SISO bilinear dynamical systems.
#[derive(Parser)]
#[command(name = "bilmor", version)]
struct Cli {
    /// Config file of key=value lines; see the README for the key table.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key as key=value; repeatable, wins over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Reduce a system and save the reduced quadruple plus the iteration trace.
    Reduce,
    /// H2 norm of the leading transfer series terms.
    H2norm,
    /// Interpolation residuals of a reduced model against its full system.
    VerifyInterp,
    /// Error norms and error bounds under a swept state-matrix perturbation.
    Sweep,
    /// Reduced-model drift as the inner solver tolerance varies.
    FirstCondition,
    /// Contraction hypotheses of the perturbation analysis.
    HypoCheck,
    /// Generate a small self-contained demo problem.
    GenDemo,
}

impl Cmd {
    fn command(&self) -> Command {
        match self {
            Cmd::Reduce => Command::Reduce,
            Cmd::H2norm => Command::H2Norm,
            Cmd::VerifyInterp => Command::VerifyInterp,
            Cmd::Sweep => Command::Sweep,
            Cmd::FirstCondition => Command::FirstCondition,
            Cmd::HypoCheck => Command::HypoCheck,
            Cmd::GenDemo => Command::GenDemo,
        }
    }
}

fn main() -> ExitCode {
    if let Err(err) = thread_pool_from_env() {
        eprintln!("error: {err}");
        return ExitCode::from(err.exit_code() as u8);
    }
    let cli = Cli::parse();
    let result = RunConfig::from_sources(cli.config.as_deref(), &cli.set)
        .and_then(|cfg| commands::run(cli.command.command(), &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// Applies `BILMOR_THREADS` to the global worker pool.
///
/// The pool can only be configured once per process; if something else
/// built it first the variable is silently best effort, which matches how
/// the library behaves when embedded.
fn thread_pool_from_env() -> Result<(), RunError> {
    let Some(raw) = std::env::var_os("BILMOR_THREADS") else {
        return Ok(());
    };
    let threads = raw
        .to_str()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|k| *k >= 1)
        .ok_or_else(|| {
            RunError::Validation(format!(
                "BILMOR_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}
