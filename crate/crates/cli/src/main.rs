//! Command-line pipeline for desk-scale L-PBF thermal experiments:
//! ground-truth simulation, effective-parameter identification, and Kalman
//! estimation/forecasting with report generation.

/// Like `println!` but tolerant of a closed stdout (e.g. piping into `head`),
/// where a write error must not take the process down mid-report.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}
pub(crate) use outln;

mod commands;
mod config;

use clap::{Parser, Subcommand};
use lpbf_thermal::ErrorKind;

use commands::{forecast, identify, simulate};

#[derive(Parser)]
#[command(
    name = "lpbf-tf",
    version,
    about = "Thermal state estimation and forecasting for layer-by-layer builds",
    after_help = "Set LPBF_TF_LOG=info (or debug) for progress output."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the finite-difference ground-truth simulation and export a dataset
    Simulate(simulate::SimulateArgs),
    /// Identify effective model parameters per layer epoch from a dataset
    Identify(identify::IdentifyArgs),
    /// Run Kalman estimation and forecasting against a dataset
    Forecast(forecast::ForecastArgs),
}

/// Exit codes: 0 success, 2 validation failure, 3 numerical failure.
fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LPBF_TF_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Identify(args) => identify::run(args),
        Command::Forecast(args) => forecast::run(args),
    };

    if let Err(err) = result {
        let (kind, code) = match err.kind() {
            ErrorKind::Validation | ErrorKind::Io => ("validation", 2),
            ErrorKind::Numerical => ("numerical", 3),
        };
        eprintln!("error: {kind}: {err}");
        std::process::exit(code);
    }
}
