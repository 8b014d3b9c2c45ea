use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod report;

use commands::{ablate, adapt, eval, synth, train};

/// Self-supervised monocular depth with test-time adaptation.
#[derive(Parser)]
#[command(name = "adaptdepth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset from a corridor recipe.
    Synth(synth::SynthArgs),
    /// Train depth and pose networks on a dataset.
    Train(train::TrainArgs),
    /// Run inference with optional test-time adaptation.
    Adapt(adapt::AdaptArgs),
    /// Score predicted depth against ground truth.
    Eval(eval::EvalArgs),
    /// Evaluate a grid of adaptation settings.
    Ablate(ablate::AblateArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Adapt(a) => adapt::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Ablate(a) => ablate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adaptdepth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
