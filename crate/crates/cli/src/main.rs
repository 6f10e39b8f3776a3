use std::path::PathBuf;
use std::process::ExitCode;

use cascade_cli::commands::THREADS_ENV;
use cascade_cli::{run, CliError, Command, RunOptions};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "cascade", version, about = "Branching-tree Monte Carlo experiments")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; changes speed only.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            let err = CliError::Config(format!("cannot read {}: {e}", args.config.display()));
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let opts = RunOptions {
        seed: args.seed,
        out: args.out,
        threads: args.threads,
    };
    let outcome = run(args.command, &text, &opts);
    print!("{}", outcome.report);
    if let Some(err) = &outcome.error {
        eprintln!("{}", err.to_json());
    }
    ExitCode::from(outcome.exit_code as u8)
}
