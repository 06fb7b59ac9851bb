//! `tomosar`: sparse-baseline TomoSAR experiments from the command line.

mod commands;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{
    ArrayCommand, ConfigCommand, MetricsCommand, ReconstructArgs, SceneCommand, SimulateArgs,
    SweepCommand,
};

#[derive(Parser)]
#[command(
    name = "tomosar",
    version,
    about = "Nested-array TomoSAR elevation imaging toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect baseline layouts and their difference co-arrays.
    #[command(subcommand)]
    Array(ArrayCommand),
    /// Generate synthetic snapshot stacks into a binary container.
    Simulate(SimulateArgs),
    /// Reconstruct elevation profiles from a snapshot container.
    Reconstruct(ReconstructArgs),
    /// Monte Carlo RMSE sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Scene-level point-cloud experiments.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Point-cloud evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Write or check experiment configuration files.
    #[command(subcommand)]
    Config(ConfigCommand),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Array(cmd) => commands::run_array(cmd),
        Command::Simulate(args) => commands::run_simulate(args),
        Command::Reconstruct(args) => commands::run_reconstruct(args),
        Command::Sweep(cmd) => commands::run_sweep(cmd),
        Command::Scene(cmd) => commands::run_scene(cmd),
        Command::Metrics(cmd) => commands::run_metrics(cmd),
        Command::Config(cmd) => commands::run_config(cmd),
    }
}
