use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ltc_cli::commands;
use ltc_cli::config::{Overrides, RunConfig};
use ltc_cli::exit_code;

#[derive(Parser)]
#[command(name = "ltcinfer", version, about = "Two-group LTC epidemic inference")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Seed for the sampler and the synthetic noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sampler worker threads; the total particle count is kept.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Forecast quantile levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    /// Trailing days withheld from fitting and scored by `forecast`.
    #[arg(long, global = true)]
    holdout_days: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Smooth the raw streams and assemble the observations.
    Smooth,
    /// Generate synthetic raw streams and the truth record.
    Synth,
    /// Coarse-then-daily deterministic fit.
    Fit,
    /// Projected SVGD around the fit.
    Sample,
    /// Quantile bands from the ensemble.
    Forecast,
    /// Compare the adjoint gradient with finite differences.
    Gradcheck,
}

fn run(cli: &Cli) -> ltc_core::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
        quantiles: cli.quantiles.clone(),
        holdout_days: cli.holdout_days,
    };
    let cfg = RunConfig::load(&cli.config, &overrides)?;
    match cli.verb {
        Verb::Smooth => commands::cmd_smooth(&cfg),
        Verb::Synth => commands::cmd_synth(&cfg),
        Verb::Fit => commands::cmd_fit(&cfg).map(drop),
        Verb::Sample => commands::cmd_sample(&cfg).map(drop),
        Verb::Forecast => commands::cmd_forecast(&cfg).map(drop),
        Verb::Gradcheck => commands::cmd_gradcheck(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
