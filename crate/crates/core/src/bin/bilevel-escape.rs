use std::path::PathBuf;
use std::process::ExitCode;

use bilevel_escape::experiment::{cmd_run, cmd_sweep, cmd_verify_constants};
use clap::{Parser, Subcommand};

/// Saddle-escaping bilevel and minimax optimizers on synthetic testbeds.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every seed of a config; writes per-seed CSV traces and summary.json.
    Run { config: PathBuf },
    /// Print smoothness constants and theory parameters.
    VerifyConstants { config: PathBuf },
    /// Median iterations-to-certification over a grid, with a log–log fit.
    Sweep { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run { config } => cmd_run(&config),
        Cmd::VerifyConstants { config } => cmd_verify_constants(&config),
        Cmd::Sweep { config } => cmd_sweep(&config),
    };
    ExitCode::from(code as u8)
}
