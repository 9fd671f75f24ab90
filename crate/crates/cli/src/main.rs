mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Context, Failure};
use config::{ExperimentConfig, Mode};

/// Simulate two-species reaction-diffusion systems and reconstruct their
/// unknown reaction or interaction terms.
#[derive(Debug, Parser)]
#[command(name = "rdid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Noise seed, overriding `measurement.seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Interaction strength(s), comma separated.
    #[arg(
        long,
        global = true,
        value_name = "LIST",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    beta: Vec<f64>,

    /// Measurement mode, overriding `measurement.mode`.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,

    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the forward problem and write trajectory snapshots.
    Forward,
    /// Simulate or load data and reconstruct the unknown pair.
    Invert,
    /// Reconstruct for several values of beta.
    Sweep,
    /// Decay, dissipativity and range condition checks.
    Diagnose,
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    config.apply_overrides(cli.seed, cli.mode, cli.out.clone());
    let ctx = Context {
        config,
        betas: cli.beta.clone(),
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Forward => commands::forward(&ctx),
        Command::Invert => commands::invert(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Diagnose => commands::diagnose(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(64)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
