//! Configuration resolution: built-in defaults, then the JSON config file,
//! then explicit command-line flags.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;

use mplc_sim::{Detection, Metric, NoiseMode, Scheme};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, CommonArgs};

/// JSON config file: every field optional, same names as the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    ports: Option<usize>,
    layers: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    metric: Option<String>,
    detection: Option<String>,
    scheme: Option<String>,
    step: Option<Vec<f64>>,
    sigma: Option<Vec<f64>>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    max_iters: Option<usize>,
    noise_mode: Option<String>,
    knots: Option<usize>,
    c2: Option<f64>,
    c3: Option<f64>,
}

/// Fully resolved run configuration (also dumped into every sidecar).
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub command: String,
    pub ports: usize,
    pub layers: usize,
    pub trials: usize,
    pub seed: u64,
    pub metric: Metric,
    pub detection: Detection,
    pub scheme: Option<Scheme>,
    pub steps: Option<Vec<f64>>,
    pub sigmas: Option<Vec<f64>>,
    pub out: PathBuf,
    pub jobs: usize,
    pub max_iters: usize,
    pub noise_mode: NoiseMode,
    pub knots: usize,
    pub c2: f64,
    pub c3: f64,
}

fn parse_metric(s: &str) -> CliResult<Metric> {
    match s {
        "frobenius" => Ok(Metric::FrobeniusSq),
        "magnitude" => Ok(Metric::MagnitudeDistance),
        "intensity" => Ok(Metric::IntensityDistance),
        _ => Err(CliError::Config(format!(
            "unknown metric '{s}' (expected frobenius | magnitude | intensity)"
        ))),
    }
}

fn parse_detection(s: &str) -> CliResult<Detection> {
    match s {
        "coherent" => Ok(Detection::Coherent),
        "intensity" => Ok(Detection::Intensity),
        _ => Err(CliError::Config(format!(
            "unknown detection '{s}' (expected coherent | intensity)"
        ))),
    }
}

fn parse_scheme(s: &str) -> CliResult<Scheme> {
    match s {
        "central-sinc" => Ok(Scheme::CentralSinc),
        "central-plain" => Ok(Scheme::CentralPlain),
        "forward" => Ok(Scheme::Forward),
        "backward" => Ok(Scheme::Backward),
        "analytic" => Ok(Scheme::Analytic),
        _ => Err(CliError::Config(format!(
            "unknown scheme '{s}' (expected central-sinc | central-plain | forward | backward | analytic)"
        ))),
    }
}

fn parse_noise_mode(s: &str) -> CliResult<NoiseMode> {
    match s {
        "paired" => Ok(NoiseMode::Paired),
        "fresh" => Ok(NoiseMode::Fresh),
        _ => Err(CliError::Config(format!(
            "unknown noise mode '{s}' (expected paired | fresh)"
        ))),
    }
}

/// Default step for a scheme when the user names the scheme but no step.
pub fn default_step(scheme: Scheme) -> f64 {
    match scheme {
        Scheme::CentralSinc | Scheme::CentralPlain => FRAC_PI_2,
        Scheme::Forward | Scheme::Backward => (0.5f64).powi(18),
        Scheme::Analytic => 0.0,
    }
}

impl Resolved {
    pub fn from_args(command: &str, args: &CommonArgs) -> CliResult<Self> {
        let file: FileConfig = match &args.config {
            None => FileConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read config file {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("bad config file {}: {e}", path.display()))
                })?
            }
        };

        // Per-command defaults.
        let default_detection = match command {
            "metric-compare" | "distance-relation" => Detection::Intensity,
            _ => Detection::Coherent,
        };
        let default_trials = match command {
            "distance-relation" => 128,
            _ => 64,
        };
        let default_max_iters = match command {
            // A finite budget leaves the per-trial final errors spread over
            // several decades, which is what the error-relation scatter needs.
            "distance-relation" => 100,
            _ => 1000,
        };

        let detection = match args.detection.as_deref().or(file.detection.as_deref()) {
            Some(s) => parse_detection(s)?,
            None => default_detection,
        };
        let metric = match args.metric.as_deref().or(file.metric.as_deref()) {
            Some(s) => parse_metric(s)?,
            None => match detection {
                Detection::Coherent => Metric::FrobeniusSq,
                Detection::Intensity => Metric::IntensityDistance,
            },
        };
        let scheme = match args.scheme.as_deref().or(file.scheme.as_deref()) {
            Some(s) => Some(parse_scheme(s)?),
            None => None,
        };
        let noise_mode = match args.noise_mode.as_deref().or(file.noise_mode.as_deref()) {
            Some(s) => parse_noise_mode(s)?,
            None => NoiseMode::Paired,
        };

        let steps = args.step.clone().or(file.step);
        if let Some(steps) = &steps {
            if steps.is_empty() {
                return Err(CliError::Config("empty step list".into()));
            }
            for &h in steps {
                if !h.is_finite() || h < 0.0 {
                    return Err(CliError::Config(format!("bad step {h}")));
                }
                if matches!(scheme, Some(Scheme::CentralSinc)) && !(h > 0.0 && h < PI) {
                    return Err(CliError::Config(format!(
                        "sinc-corrected central difference needs 0 < h < π, got {h}"
                    )));
                }
            }
        }
        let sigmas = args.sigma.clone().or(file.sigma);
        if let Some(sigmas) = &sigmas {
            if sigmas.is_empty() {
                return Err(CliError::Config("empty sigma list".into()));
            }
            for &s in sigmas {
                if !s.is_finite() || s < 0.0 {
                    return Err(CliError::Config(format!("bad sigma {s}")));
                }
            }
        }

        let resolved = Self {
            command: command.to_string(),
            ports: args.ports.or(file.ports).unwrap_or(8),
            layers: args.layers.or(file.layers).unwrap_or(9),
            trials: args.trials.or(file.trials).unwrap_or(default_trials),
            seed: args.seed.or(file.seed).unwrap_or(1),
            metric,
            detection,
            scheme,
            steps,
            sigmas,
            out: args.out.clone().or(file.out).unwrap_or_else(|| "out".into()),
            jobs: args.jobs.or(file.jobs).unwrap_or(0),
            max_iters: args.max_iters.or(file.max_iters).unwrap_or(default_max_iters),
            noise_mode,
            knots: args.knots.or(file.knots).unwrap_or(64),
            c2: args.c2.or(file.c2).unwrap_or(0.1),
            c3: args.c3.or(file.c3).unwrap_or(0.0),
        };

        if resolved.ports == 0 || resolved.layers == 0 {
            return Err(CliError::Config("ports and layers must be positive".into()));
        }
        if resolved.trials == 0 {
            return Err(CliError::Config("need at least one trial".into()));
        }
        if resolved.max_iters == 0 {
            return Err(CliError::Config("iteration budget must be positive".into()));
        }
        if resolved.knots < 8 {
            return Err(CliError::Config("need at least 8 knots".into()));
        }
        let optimizes = matches!(
            command,
            "convergence" | "noise-bench" | "detection-compare" | "distance-relation"
        );
        if optimizes && resolved.metric == Metric::MagnitudeDistance {
            return Err(CliError::Config(
                "the magnitude distance has no exact gradient and cannot drive optimization; \
                 use intensity or frobenius"
                    .into(),
            ));
        }

        Ok(resolved)
    }
}
