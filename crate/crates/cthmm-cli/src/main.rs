//! Command-line front end: simulation, fitting, and smoothing for jump and
//! diffusion models, a Kalman reference for linear models, and canned
//! experiment pipelines that write plot-ready CSV and JSON artifacts.
//!
//! Every option can also come from a JSON config file (`--config`); a flag
//! given on the command line wins over the file, and built-in defaults fill
//! the rest. `--dry-run` prints the fully resolved configuration as JSON and
//! exits without computing.

mod commands;
mod experiments;

use clap::{Parser, Subcommand, ValueEnum};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cthmm", version, about = "State and parameter estimation for continuous-time hidden Markov models")]
struct Cli {
    /// Force all internal loops onto one thread for byte-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a hidden jump process and its symbol observations.
    SimulateJump(commands::SimulateJumpArgs),
    /// Fit the generator of a jump model by EM.
    FitJump(commands::FitJumpArgs),
    /// Compute the smoothing posterior of a jump model.
    PosteriorJump(commands::PosteriorJumpArgs),
    /// Simulate a hidden diffusion and its observation increments.
    SimulateSde(commands::SimulateSdeArgs),
    /// Fit drift parameters of a diffusion model by Monte Carlo EM.
    FitSde(commands::FitSdeArgs),
    /// Run the Kalman filter and smoother of a linear Gaussian model.
    Kalman(commands::KalmanArgs),
    /// Run one of the canned end-to-end experiments.
    Experiment(experiments::ExperimentArgs),
}

/// Observation mode shared by the jump subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsModeArg {
    /// The symbol stream is watched continuously; rows are its change times.
    Continuous,
    /// Symbols are drawn at scheduled times only.
    Discrete,
}

impl From<ObsModeArg> for cthmm::jump::ObsMode {
    fn from(mode: ObsModeArg) -> Self {
        match mode {
            ObsModeArg::Continuous => cthmm::jump::ObsMode::Continuous,
            ObsModeArg::Discrete => cthmm::jump::ObsMode::Discrete,
        }
    }
}

/// Model family for the diffusion subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    /// Planar tracking from noisy bearings; parameters are the accelerations.
    Bearings,
    /// Cubic sensor with a fully parameterized drift matrix.
    CubicMatrix,
    /// Cubic sensor with a tridiagonal drift scaled by one parameter.
    CubicTridiagonal,
    /// Cyclic advection with unknown constant forcing.
    Lorenz96,
    /// Linear drift and observation, matrices supplied in the config file.
    Linear,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    cthmm::exec::set_sequential(cli.deterministic);
    let result = match cli.command {
        Command::SimulateJump(args) => commands::simulate_jump(args),
        Command::FitJump(args) => commands::fit_jump(args),
        Command::PosteriorJump(args) => commands::posterior_jump(args),
        Command::SimulateSde(args) => commands::simulate_sde(args),
        Command::FitSde(args) => commands::fit_sde(args),
        Command::Kalman(args) => commands::kalman(args),
        Command::Experiment(args) => experiments::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
