//! `tinbc` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime error or failed validation, 2 invalid
//! config, plan file or arguments, 3 no feasible design.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tinbc::rate::{EstimatorSettings, MIN_NOISE_SAMPLES};
use tinbc::scheme::build_layout;

use commands::{Failure, Run};
use config::{ExperimentConfig, DEFAULT_SAMPLES, DEFAULT_SEED};

/// Environment variable holding the worker thread count.
const WORKERS_VAR: &str = "TINBC_WORKERS";

#[derive(Parser)]
#[command(name = "tinbc", version, about = "QAM superposition with treating interference as noise over a broadcast channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search order matrices and write the Pareto candidates.
    Design {
        #[command(flatten)]
        common: Common,
        /// Also write the best candidate's plan as JSON.
        #[arg(long)]
        plan_out: Option<PathBuf>,
    },
    /// QAM rate points and Gaussian TIN and perfect-SIC frontiers.
    RateRegion {
        #[command(flatten)]
        common: Common,
    },
    /// QAM rates beside Gaussian and shell benchmarks at the same power split.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
    /// Uncoded bit error rates, optionally dumping one frame.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run the invariant checks on the configured system.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Plan file to check against the config.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `sampling.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Noise samples per estimate; overrides `sampling.noise_samples`.
    #[arg(long)]
    samples: Option<usize>,
}

fn prepare(common: &Common) -> Result<Run, Failure> {
    let config = ExperimentConfig::load(&common.config).map_err(|e| Failure::Config(e.to_string()))?;
    let spec = config.spec();
    let layout = build_layout(&spec).map_err(|e| Failure::Config(e.to_string()))?;
    let seed = common.seed.or(config.sampling.seed).unwrap_or(DEFAULT_SEED);
    let samples = common.samples.or(config.sampling.noise_samples).unwrap_or(DEFAULT_SAMPLES);
    if samples < MIN_NOISE_SAMPLES {
        return Err(Failure::Config(format!("samples must be at least {MIN_NOISE_SAMPLES}")));
    }
    Ok(Run {
        config,
        spec,
        layout,
        settings: EstimatorSettings::new(samples, seed),
        out: common.out.clone(),
    })
}

fn configure_workers() -> Result<(), Failure> {
    let Ok(value) = std::env::var(WORKERS_VAR) else {
        return Ok(());
    };
    let workers: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{WORKERS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    configure_workers()?;
    match cli.command {
        Command::Design { common, plan_out } => commands::design(&prepare(&common)?, plan_out.as_deref()),
        Command::RateRegion { common } => commands::rate_region(&prepare(&common)?),
        Command::Benchmark { common } => commands::benchmark(&prepare(&common)?),
        Command::Simulate { common, dump } => commands::simulate(&prepare(&common)?, dump.as_deref()),
        Command::Validate { common, plan } => commands::validate(&prepare(&common)?, plan.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::NoDesign(msg)) => {
            eprintln!("no feasible design: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Validation(n)) => {
            eprintln!("validation failed: {n} check(s)");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
