use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use objsup_cli::{run_eval, run_oracle_check, run_train, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "objsup", version, about = "Objective Suppression experiments")]
struct Cli {
    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics plus a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Roll out a saved checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
    },
    /// Check every estimator against the exact oracle on the configured grid.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_train(&cfg, cli.seed_override, None)?;
            println!("{}", json(&summary));
            Ok(if summary.is_complete() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::Eval {
            config,
            checkpoint,
            episodes,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}", json(&run_eval(&cfg, &checkpoint, episodes, cli.seed_override)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_oracle_check(&cfg)?;
            println!("{}", json(&report));
            Ok(if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("objsup: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
