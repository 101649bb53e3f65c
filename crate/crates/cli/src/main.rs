//! `gazesep` command-line workflows.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BuildBankArgs, EvalArgs, ExportArgs, Globals, PlotArgs, SynthArgs, TrainArgs, TunePromptsArgs};

#[derive(Debug, Parser)]
#[command(name = "gazesep", version, about = "Gaze estimation with nuisance-feature separation")]
struct Cli {
    /// TOML file with training config fields; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (output file for build-bank).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode the irrelevant-factor taxonomy into a feature bank.
    BuildBank(BuildBankArgs),
    /// Tune identity-conditioned prompts on attribute labels.
    TunePrompts(TunePromptsArgs),
    /// Train a gaze model and write checkpoint and metrics.
    Train(TrainArgs),
    /// Print the mean angular error of a model on a dataset.
    Eval(EvalArgs),
    /// Write predictions and filtered features per sample.
    ExportFeatures(ExportArgs),
    /// Project exported features to 2-D, colored by gaze yaw.
    Plot(PlotArgs),
    /// Generate a synthetic gaze dataset.
    SynthData(SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let globals = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    let result = match &cli.command {
        Command::BuildBank(a) => commands::build_bank(&globals, a),
        Command::TunePrompts(a) => commands::tune_prompts_cmd(&globals, a),
        Command::Train(a) => commands::train_cmd(&globals, a),
        Command::Eval(a) => commands::eval_cmd(&globals, a),
        Command::ExportFeatures(a) => commands::export_cmd(&globals, a),
        Command::Plot(a) => commands::plot_cmd(&globals, a),
        Command::SynthData(a) => commands::synth_data(&globals, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
