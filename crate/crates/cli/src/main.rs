use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpmss_cli::{run, CliError, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "dpmss", version, about = "State estimation with Dirichlet process mixture noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Batch MCMC on one series.
    Mcmc(RunArgs),
    /// Particle filter with fixed-lag smoothing on one series.
    Rbpf(RunArgs),
    /// Deconvolution benchmark over variants and seeds.
    DeconvBench(RunArgs),
    /// Change-point detection in a trend series.
    Changepoint(RunArgs),
    /// Write a synthetic series and its ground truth.
    Simulate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Replaces the configured seeds with this one.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory; overrides io.output.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

fn execute(mode: Mode, args: RunArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.run.seeds = vec![seed];
    }
    let config = config.resolve(mode)?;
    let out = args
        .out
        .or_else(|| config.io.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let summary = run(&config, &out, args.quiet)?;
    log::info!(
        "{} finished in {:.2} s, artifacts in {}",
        mode.name(),
        summary["wall_time_s"].as_f64().unwrap_or_default(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Mcmc(a) => (Mode::Mcmc, a),
        Command::Rbpf(a) => (Mode::Rbpf, a),
        Command::DeconvBench(a) => (Mode::DeconvBench, a),
        Command::Changepoint(a) => (Mode::Changepoint, a),
        Command::Simulate(a) => (Mode::Simulate, a),
    };
    let level = if args.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
