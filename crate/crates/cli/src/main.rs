//! Experiment harness for the converter simulator.
//!
//! Each subcommand reproduces one experiment and writes machine-readable
//! results: CSV for plotted series, a JSON sidecar per dataset carrying the
//! full resolved configuration, seed and artifact version. Runs with equal
//! seeds produce byte-identical outputs.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::Resolved;

/// Exit code 2: configuration problem. Exit code 1: runtime failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<mplc_sim::Error> for CliError {
    fn from(e: mplc_sim::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "mplc-sim",
    version,
    about = "Programmable unitary converter experiments: gradient measurement, \
             convergence, noise tolerance, distance comparisons, calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one phase shifter and record the cost curve plus its sine fit.
    SineSweep(CommonArgs),
    /// Convergence quantiles across gradient schemes and step sizes.
    Convergence(CommonArgs),
    /// Convergence quantiles under measurement noise.
    NoiseBench(CommonArgs),
    /// Sweep one shifter and record both phase-insensitive distances.
    MetricCompare(CommonArgs),
    /// Coherent vs intensity detection convergence.
    DetectionCompare(CommonArgs),
    /// Optimize the intensity distance, then evaluate the magnitude
    /// distance at the optimum, per trial.
    DistanceRelation(CommonArgs),
    /// Pre-calibrate phase-shifter linearity and report residuals.
    Calibrate(CommonArgs),
}

#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// JSON file supplying any of the flags below; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Port count N.
    #[arg(long)]
    ports: Option<usize>,

    /// Fixed-unitary layer count m.
    #[arg(long)]
    layers: Option<usize>,

    /// Number of optimization trials.
    #[arg(long)]
    trials: Option<usize>,

    /// Base seed; trial t uses seed + t.
    #[arg(long)]
    seed: Option<u64>,

    /// Cost metric: frobenius | magnitude | intensity.
    #[arg(long)]
    metric: Option<String>,

    /// Detection mode: coherent | intensity.
    #[arg(long)]
    detection: Option<String>,

    /// Gradient scheme: central-sinc | central-plain | forward | backward | analytic.
    #[arg(long)]
    scheme: Option<String>,

    /// Step size(s) h in radians, comma-separated.
    #[arg(long, value_delimiter = ',')]
    step: Option<Vec<f64>>,

    /// Measurement-noise σ value(s), comma-separated.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads for trial-level parallelism (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,

    /// Iteration budget per trial.
    #[arg(long)]
    max_iters: Option<usize>,

    /// Noise correlation across the probes of one gradient: paired | fresh.
    #[arg(long)]
    noise_mode: Option<String>,

    /// Correction-table knot count (calibrate).
    #[arg(long)]
    knots: Option<usize>,

    /// Quadratic drive-nonlinearity coefficient (calibrate).
    #[arg(long)]
    c2: Option<f64>,

    /// Cubic drive-nonlinearity coefficient (calibrate).
    #[arg(long)]
    c3: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::SineSweep(a) => ("sine-sweep", a),
        Command::Convergence(a) => ("convergence", a),
        Command::NoiseBench(a) => ("noise-bench", a),
        Command::MetricCompare(a) => ("metric-compare", a),
        Command::DetectionCompare(a) => ("detection-compare", a),
        Command::DistanceRelation(a) => ("distance-relation", a),
        Command::Calibrate(a) => ("calibrate", a),
    };

    let resolved = match Resolved::from_args(name, args) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("mplc-sim: {e}");
            return ExitCode::from(2);
        }
    };

    let run = || match name {
        "sine-sweep" => commands::sine_sweep(&resolved),
        "convergence" => commands::convergence(&resolved),
        "noise-bench" => commands::noise_bench(&resolved),
        "metric-compare" => commands::metric_compare(&resolved),
        "detection-compare" => commands::detection_compare(&resolved),
        "distance-relation" => commands::distance_relation(&resolved),
        "calibrate" => commands::calibrate(&resolved),
        _ => unreachable!(),
    };

    let outcome = if resolved.jobs > 0 {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(resolved.jobs)
            .build()
        {
            Ok(pool) => pool.install(run),
            Err(e) => Err(CliError::Runtime(format!("thread pool: {e}"))),
        }
    } else {
        run()
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("mplc-sim: configuration error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("mplc-sim: {m}");
            ExitCode::from(1)
        }
    }
}
