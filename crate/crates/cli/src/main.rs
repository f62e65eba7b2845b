//! `tactcap` command-line front end.
//!
//! Config files are JSON; any flag given on the command line overrides the
//! corresponding file value, and unset fields take library defaults.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tactcap::ErrorClass;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "tactcap", version, about = "Caption vibrotactile signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic paired corpus.
    Synth(commands::SynthArgs),
    /// Train a model on a manifest.
    Train(commands::TrainArgs),
    /// Caption signal CSV files with a checkpoint.
    Caption(commands::CaptionArgs),
    /// Score a checkpoint on a manifest split.
    Eval(commands::EvalArgs),
    /// Train and evaluate a grid of variants, input modes and seeds.
    Ablate(commands::AblateArgs),
    /// Keyword search over generated captions.
    Retrieve(commands::RetrieveArgs),
    /// Finite-difference gradient gate.
    Gradcheck(commands::GradcheckArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tactcap::Error>() {
            return match e.class() {
                ErrorClass::Usage => EXIT_USAGE,
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<commands::GateFailed>().is_some() {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Caption(a) => commands::caption(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Retrieve(a) => commands::retrieve(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
