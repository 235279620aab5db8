use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfpmp_cli::{cmd_check, cmd_optimize, cmd_simulate, Run, Suite};

#[derive(Parser)]
#[command(name = "mfpmp", version, about = "Particle solver and PMP optimizer for controlled nonlocal balance laws")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random draw; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the state forward under the configured control.
    Simulate,
    /// Minimize the terminal cost.
    Optimize,
    /// Run a validator suite: derivatives, gradient, weak-form,
    /// hamiltonian-equivalence or lipschitz-beta.
    Check { suite: Suite },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Run::new(&cli.config, cli.out, cli.seed).and_then(|run| match cli.command {
        Command::Simulate => cmd_simulate(&run),
        Command::Optimize => cmd_optimize(&run),
        Command::Check { suite } => cmd_check(&run, suite),
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
