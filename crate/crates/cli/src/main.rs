mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Context};

/// Steady states, basin condition and simulations for the 1-D granular
/// media equation with a double-well confinement.
#[derive(Debug, Parser)]
#[command(name = "granular", version)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set particles.n_particles=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady-state family, m(σ), t_σ, spectral gap and optionally σ_c.
    Analyze,
    /// Critical noise level below which three steady states exist.
    SigmaC,
    /// Searches a δ witnessing the basin condition for the initial law.
    Check,
    /// Runs a simulator from the initial law.
    Simulate {
        #[command(subcommand)]
        kind: SimKind,
    },
    /// Condition check and simulated limit for a family of initial laws.
    Sweep,
}

#[derive(Debug, Subcommand)]
enum SimKind {
    /// Interacting particle system.
    Particles,
    /// Finite-volume solver of the nonlinear Fokker–Planck equation.
    Pde,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| config::ConfigError::new("--config", "a config file is required"))?;
    let loaded = config::load(&path, &cli.overrides)?;
    let ctx = Context::new(loaded, cli.out, cli.seed)?;
    match cli.command {
        Command::Analyze => commands::analyze(&ctx),
        Command::SigmaC => commands::sigma_c(&ctx),
        Command::Check => commands::check(&ctx),
        Command::Simulate { kind: SimKind::Particles } => commands::simulate_particles(&ctx),
        Command::Simulate { kind: SimKind::Pde } => commands::simulate_pde(&ctx),
        Command::Sweep => commands::sweep(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
