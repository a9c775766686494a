//! Command-line driver: train, attack, eval, theory and sweep.

mod commands;
mod config;
mod data;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pamacf::ErrorKind;

use commands::{SweepParam, TheoryArgs};
use config::ExperimentArgs;

#[derive(Parser)]
#[command(name = "pamacf", version, about = "Robust collaborative filtering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes model.bin and trace.csv
    Train(ExperimentArgs),
    /// Inject fake users; writes the poisoned splits, fake.txt and attack.json
    Attack(ExperimentArgs),
    /// Evaluate a model; writes metrics.csv
    Eval {
        /// Model file written by `train`
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Verify the error-reduction theorems on the Gaussian system; writes theory.csv
    Theory(TheoryArgs),
    /// Train and evaluate over values of rho or lambda; writes sweep.csv
    Sweep {
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Attack(a) => commands::cmd_attack(a),
        Command::Eval { model, exp } => commands::cmd_eval(model, exp),
        Command::Theory(a) => commands::cmd_theory(a),
        Command::Sweep { param, values, exp } => commands::cmd_sweep(*param, values, exp),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
