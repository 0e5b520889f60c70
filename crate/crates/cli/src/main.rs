use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prevmap_cli::pipeline::{
    cmd_areas, cmd_excursions, cmd_fit, cmd_report, cmd_run, cmd_simulate,
};
use prevmap_cli::{CliError, CliResult, PipelineConfig};

/// Thread-count override for the worker pool.
const THREADS_VAR: &str = "PREVMAP_THREADS";

#[derive(Parser)]
#[command(
    name = "prevmap",
    version,
    about = "Geostatistical and small-area prevalence mapping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a survey and its truth surface.
    Simulate(Args),
    /// Fit the SPDE and/or BYM models.
    Fit(Args),
    /// Area-level prevalence averages from the SPDE posterior.
    Areas(Args),
    /// Joint excursion sets on the map grid.
    Excursions(Args),
    /// SVG and PGM maps of fitted outputs.
    Report(Args),
    /// All of the above in order.
    Run(Args),
    /// Print the resolved configuration.
    Config(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML configuration file.
    #[arg(short, long)]
    config: PathBuf,
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "{THREADS_VAR} must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("{THREADS_VAR}: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let (args, f): (&Args, fn(&PipelineConfig) -> CliResult<()>) = match &cli.command {
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Fit(a) => (a, cmd_fit),
        Command::Areas(a) => (a, cmd_areas),
        Command::Excursions(a) => (a, cmd_excursions),
        Command::Report(a) => (a, cmd_report),
        Command::Run(a) => (a, cmd_run),
        Command::Config(a) => (a, |cfg| {
            print!("{}", cfg.to_toml());
            Ok(())
        }),
    };
    let cfg = PipelineConfig::load(&args.config)?;
    f(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
