use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heavyq_cli::commands::{apply_overrides, CliError, Run};
use heavyq_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "heavyq", version, about = "Delay of MArP/G/1 queues with a small heavy-tailed service fraction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the phase-type base model.
    Solve(Args),
    /// Corrected and simplified approximations on a grid.
    Approx(Args),
    /// Error table of the approximations against the exact delay.
    Compare(Args),
    /// Monte-Carlo simulation of the mixture model.
    Simulate(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Heavy-tailed fraction; overrides `eps` in the config. Accepts p/q.
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<String>,
    /// replace, discard or both.
    #[arg(long)]
    variant: Option<String>,
    /// Only the simplified approximation.
    #[arg(long)]
    simplified: bool,
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cmd: Cmd) -> Result<String, CliError> {
    let (args, which) = match cmd {
        Cmd::Solve(a) => (a, "solve"),
        Cmd::Approx(a) => (a, "approx"),
        Cmd::Compare(a) => (a, "compare"),
        Cmd::Simulate(a) => (a, "simulate"),
    };
    let mut cfg = RunConfig::load(&args.config)?;
    apply_overrides(&mut cfg, args.eps.as_deref(), args.variant.as_deref(), args.simplified, args.seed)?;
    let run = Run { cfg: &cfg, out: &args.out };
    match which {
        "solve" => run.solve(),
        "approx" => run.approx(),
        "compare" => run.compare(),
        _ => run.simulate(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
