use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convtensor_cli::commands::{self, BenchArgs, CumulantArgs, DecomposeArgs, EvalArgs, GenArgs};
use convtensor_cli::CliResult;

/// Convolutional dictionary learning by third-order cumulant decomposition.
#[derive(Debug, Parser)]
#[command(name = "convtensor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw ground-truth filters and samples.
    Gen(GenArgs),
    /// One pass over sample files into a cumulant file.
    Cumulant(CumulantArgs),
    /// Recover filters with CT or the altmin baseline.
    Decompose(DecomposeArgs),
    /// Score filters against a cumulant and optionally the truth.
    Eval(EvalArgs),
    /// Run a benchmark grid.
    Bench(BenchArgs),
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("CONVTENSOR_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        convtensor_cli::CliError::Usage(format!("CONVTENSOR_THREADS must be a positive integer, got {raw:?}"))
    })?;
    // only fails if a pool already exists, which cannot happen this early
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Cumulant(a) => commands::cumulant(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Eval(a) => {
            print!("{}", commands::eval(a)?);
            Ok(())
        }
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
