//! `mdiqkd` — configuration-driven front end for the asymmetric MDI-QKD
//! fading-channel simulator.
//!
//! Subcommands: `simulate`, `optimize`, `arts`, `prts`, `sweep`, `probe`.
//! Every command reads one config file, writes its artifacts into an
//! output directory (echoing the resolved configuration), and exits 0 on
//! success, 1 on model/runtime failures, 2 on configuration errors.

mod commands;
mod config;
mod frames;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "mdiqkd",
    version,
    about = "Asymmetric MDI-QKD simulator and optimizer for turbulent channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `run.out` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `run.seed` and `ga.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for population fitness and probe batches.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Pooled counts and the finite-key rate at the configured thresholds.
    Simulate(CommonArgs),
    /// Genetic-algorithm search over the 12 protocol parameters.
    Optimize(CommonArgs),
    /// Exhaustive threshold scan; exports the rate surface.
    Arts(CommonArgs),
    /// Prefixed threshold from channel statistics and device calibration.
    Prts(CommonArgs),
    /// Static vs P-RTS rate curves over a loss range.
    Sweep(CommonArgs),
    /// Probe-pulse calibration and transmittance series.
    Probe(CommonArgs),
}

fn run(command: &Command) -> Result<(), CliError> {
    let (args, runner): (
        &CommonArgs,
        fn(&ExperimentConfig, &std::path::Path, usize) -> Result<(), CliError>,
    ) = match command {
        Command::Simulate(a) => (a, |c, o, _| commands::cmd_simulate(c, o)),
        Command::Optimize(a) => (a, commands::cmd_optimize),
        Command::Arts(a) => (a, |c, o, _| commands::cmd_arts(c, o)),
        Command::Prts(a) => (a, |c, o, _| commands::cmd_prts(c, o)),
        Command::Sweep(a) => (a, commands::cmd_sweep),
        Command::Probe(a) => (a, commands::cmd_probe),
    };
    let mut cfg =
        ExperimentConfig::load(&args.config).map_err(|e| CliError::Config(e.message.clone()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.ga.seed = seed;
        if let Some(probe) = cfg.probe.as_mut() {
            probe.seed = seed;
        }
        cfg.resolved_text = cfg.render();
    }
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    if args.threads == 0 {
        return Err(CliError::Config("--threads must be >= 1".into()));
    }
    runner(&cfg, &out_dir, args.threads)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
