//! `uqcal` — calibration, conformal, selective-prediction, and explanation
//! pipeline over black-box classifiers.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use uqcal_cli::commands;

#[derive(Parser)]
#[command(
    name = "uqcal",
    version,
    about = "Uncertainty calibration and explanation toolkit",
    long_about = "Fits temperature scaling, builds split-conformal prediction sets, \
                  derives selective-prediction policies, and explains black-box \
                  classifiers with stability-checked superpixel attributions. \
                  Every command reads a JSON config and writes deterministic \
                  artifacts into --out."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON config; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// RNG seed. Required by synth and explain, and by randomized conformal
    /// scoring; unused otherwise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known miscalibration and a planted
    /// image signal.
    Synth(CommonArgs),
    /// Fit a temperature on the calibration split; report ECE/Brier effect
    /// on the evaluation split.
    Calibrate(CommonArgs),
    /// Full evaluation report: accuracy, calibration, conformal sets,
    /// selective prediction, stratified metrics, plots.
    Report(CommonArgs),
    /// Split-conformal prediction sets and their coverage.
    Conformal(CommonArgs),
    /// Risk-coverage analysis and an abstention policy for a target risk.
    Select(CommonArgs),
    /// Superpixel attributions with stability intervals and a
    /// reliability-weighted saliency map.
    Explain(CommonArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (name, args, run): (_, _, fn(Option<u64>, &std::path::Path, &std::path::Path) -> _) =
        match &cli.command {
            Command::Synth(a) => ("synth", a, commands::run_synth),
            Command::Calibrate(a) => ("calibrate", a, commands::run_calibrate),
            Command::Report(a) => ("report", a, commands::run_report),
            Command::Conformal(a) => ("conformal", a, commands::run_conformal),
            Command::Select(a) => ("select", a, commands::run_select),
            Command::Explain(a) => ("explain", a, commands::run_explain),
        };
    match run(args.seed, &args.config, &args.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("uqcal {name}: error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
