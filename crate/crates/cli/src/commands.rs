//! The experiment subcommands.

use std::f64::consts::{FRAC_PI_2, PI};

use mplc_sim::{
    calibrate_shifter, corrected_gradient_error, fit_sinusoid, haar_unitary,
    intensity_distance, magnitude_distance, normalized_cost, run_trials, summarize, sweep_cost,
    trial_environment, CalibrationSet, CostKind, Detection, EstimatorConfig, Metric, MplcDevice,
    NoisyCostProbe, OptimizerOptions, ParamVector, PhaseResponse, QuantileRow, RngSeed, Scheme,
    SinusoidFit, TrialConfig, TrialTrace,
};
use rand::Rng;
use serde::Serialize;

use crate::config::{default_step, Resolved};
use crate::output::{display, fmt, value_label, OutDir};
use crate::{CliError, CliResult};

fn scheme_label(s: Scheme) -> &'static str {
    match s {
        Scheme::CentralSinc => "central-sinc",
        Scheme::CentralPlain => "central-plain",
        Scheme::Forward => "forward",
        Scheme::Backward => "backward",
        Scheme::Analytic => "analytic",
    }
}

fn trial_config(
    cfg: &Resolved,
    detection: Detection,
    metric: Metric,
    estimator: EstimatorConfig<f64>,
) -> TrialConfig<f64> {
    TrialConfig {
        n_ports: cfg.ports,
        n_layers: cfg.layers,
        detection,
        metric,
        estimator,
        options: OptimizerOptions {
            max_iterations: cfg.max_iters,
            ..OptimizerOptions::default()
        },
        n_trials: cfg.trials,
        seed0: cfg.seed,
    }
}

type ArmOutput = (Vec<TrialTrace<f64>>, Vec<QuantileRow<f64>>);

fn run_arm(
    cfg: &Resolved,
    detection: Detection,
    metric: Metric,
    estimator: EstimatorConfig<f64>,
) -> CliResult<ArmOutput> {
    let tc = trial_config(cfg, detection, metric, estimator);
    tc.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let traces = run_trials(&tc)?;
    let rows = summarize(&traces)?;
    Ok((traces, rows))
}

#[derive(Serialize)]
struct ArmSummary {
    scheme: Scheme,
    step: f64,
    sigma: f64,
    median_final: f64,
    min_final: f64,
    max_final: f64,
    csv: String,
}

fn summarize_arm(
    est: &EstimatorConfig<f64>,
    rows: &[QuantileRow<f64>],
    csv: String,
) -> ArmSummary {
    let last = rows.last().expect("non-empty quantile table");
    ArmSummary {
        scheme: est.scheme,
        step: est.step,
        sigma: est.noise_sigma,
        median_final: last.median,
        min_final: last.min,
        max_final: last.max,
        csv,
    }
}

/// Sweep one randomly chosen shifter over 256 points and fit the sinusoid.
pub fn sine_sweep(cfg: &Resolved) -> CliResult<()> {
    let out = OutDir::create(cfg)?;
    let mut rng = RngSeed(cfg.seed).stream();
    let device: MplcDevice<f64> =
        MplcDevice::sample(cfg.ports, cfg.layers, cfg.detection, &mut rng)?;
    let target = haar_unitary(cfg.ports, &mut rng)?;
    let p0 = device.sample_initial_params(&mut rng);
    let shifter = rng.random_range(0..device.param_count());

    let kind = CostKind::normalized(cfg.metric);
    let samples = sweep_cost(&device, &target, &p0, shifter, 256, kind)?;
    let (fit, residual) = fit_sinusoid(&samples)?;

    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|&(phi, c)| vec![fmt(phi), fmt(c)])
        .collect();
    let csv = out.write_csv("sine_sweep.csv", "phi,cost", &rows)?;

    #[derive(Serialize)]
    struct Results {
        shifter: usize,
        fit: SinusoidFit<f64>,
        residual: f64,
        csv: String,
    }
    out.write_sidecar(
        "sine_sweep.json",
        cfg,
        &Results {
            shifter,
            fit,
            residual,
            csv: display(&csv),
        },
    )?;
    println!(
        "sine-sweep: shifter {shifter}, amplitude {:e}, residual {:e} -> {}",
        fit.amplitude,
        residual,
        display(&csv)
    );
    Ok(())
}

fn estimator_arms(cfg: &Resolved) -> Vec<EstimatorConfig<f64>> {
    match cfg.scheme {
        Some(scheme) => {
            let steps = cfg
                .steps
                .clone()
                .unwrap_or_else(|| vec![default_step(scheme)]);
            steps
                .into_iter()
                .map(|h| EstimatorConfig::noiseless(scheme, h))
                .collect()
        }
        None => vec![
            EstimatorConfig::noiseless(Scheme::CentralSinc, FRAC_PI_2),
            EstimatorConfig::noiseless(Scheme::CentralSinc, 1.0),
            EstimatorConfig::noiseless(Scheme::CentralSinc, 0.1),
            EstimatorConfig::noiseless(Scheme::Forward, (0.5f64).powi(18)),
            EstimatorConfig::noiseless(Scheme::Forward, (0.5f64).powi(6)),
        ],
    }
}

/// Convergence quantiles per (scheme, step) arm, noiseless.
pub fn convergence(cfg: &Resolved) -> CliResult<()> {
    let out = OutDir::create(cfg)?;
    for est in estimator_arms(cfg) {
        let (_, rows) = run_arm(cfg, cfg.detection, cfg.metric, est)?;
        let label = format!(
            "{}_h-{}",
            scheme_label(est.scheme),
            value_label(est.step)
        );
        let csv = out.write_quantiles(&format!("convergence_{label}.csv"), &rows)?;
        let summary = summarize_arm(&est, &rows, display(&csv));
        out.write_sidecar(&format!("convergence_{label}.json"), cfg, &summary)?;
        println!(
            "convergence {label}: median final {:e} over {} trials -> {}",
            summary.median_final,
            cfg.trials,
            display(&csv)
        );
    }
    Ok(())
}

/// Convergence quantiles across the noise grid for central and forward
/// schemes.
pub fn noise_bench(cfg: &Resolved) -> CliResult<()> {
    let out = OutDir::create(cfg)?;
    let schemes: Vec<EstimatorConfig<f64>> = match cfg.scheme {
        Some(scheme) => {
            let h = cfg
                .steps
                .as_ref()
                .map(|s| s[0])
                .unwrap_or_else(|| default_step(scheme));
            vec![EstimatorConfig::noiseless(scheme, h)]
        }
        None => vec![
            EstimatorConfig::noiseless(Scheme::CentralSinc, FRAC_PI_2),
            EstimatorConfig::noiseless(Scheme::Forward, (0.5f64).powi(18)),
        ],
    };
    let sigmas = cfg.sigmas.clone().unwrap_or_else(|| {
        vec![0.0, (0.5f64).powi(16), (0.5f64).powi(8), (0.5f64).powi(4)]
    });

    for base in &schemes {
        for &sigma in &sigmas {
            let est = base.with_noise(sigma, cfg.noise_mode);
            let (_, rows) = run_arm(cfg, cfg.detection, cfg.metric, est)?;
            let label = format!(
                "{}_h-{}_s-{}",
                scheme_label(est.scheme),
                value_label(est.step),
                value_label(sigma)
            );
            let csv = out.write_quantiles(&format!("noise_{label}.csv"), &rows)?;
            let summary = summarize_arm(&est, &rows, display(&csv));
            out.write_sidecar(&format!("noise_{label}.json"), cfg, &summary)?;
            println!(
                "noise-bench {label}: median final {:e} -> {}",
                summary.median_final,
                display(&csv)
            );
        }
    }
    Ok(())
}

/// Sweep one shifter and record both phase-insensitive distances.
pub fn metric_compare(cfg: &Resolved) -> CliResult<()> {
    let out = OutDir::create(cfg)?;
    let mut rng = RngSeed(cfg.seed).stream();
    let device: MplcDevice<f64> =
        MplcDevice::sample(cfg.ports, cfg.layers, cfg.detection, &mut rng)?;
    let target = haar_unitary(cfg.ports, &mut rng)?;
    let p0 = device.sample_initial_params(&mut rng);
    let shifter = rng.random_range(0..device.param_count());

    let points = 256usize;
    let mut magnitude_samples = Vec::with_capacity(points);
    let mut intensity_samples = Vec::with_capacity(points);
    let mut rows = Vec::with_capacity(points);
    for s in 0..points {
        let phi = 2.0 * PI * s as f64 / points as f64;
        let x = device.forward(&p0.with_value(shifter, phi))?;
        let d = normalized_cost(&target, &x, Metric::MagnitudeDistance)?;
        let dp = normalized_cost(&target, &x, Metric::IntensityDistance)?;
        magnitude_samples.push((phi, d));
        intensity_samples.push((phi, dp));
        rows.push(vec![fmt(phi), fmt(d), fmt(dp)]);
    }
    let csv = out.write_csv(
        "metric_compare.csv",
        "phi,magnitude_normalized,intensity_normalized",
        &rows,
    )?;

    let (magnitude_fit, magnitude_residual) = fit_sinusoid(&magnitude_samples)?;
    let (intensity_fit, intensity_residual) = fit_sinusoid(&intensity_samples)?;
    #[derive(Serialize)]
    struct Results {
        shifter: usize,
        magnitude_fit: SinusoidFit<f64>,
        magnitude_residual: f64,
        intensity_fit: SinusoidFit<f64>,
        intensity_residual: f64,
        csv: String,
    }
    out.write_sidecar(
        "metric_compare.json",
        cfg,
        &Results {
            shifter,
            magnitude_fit,
            magnitude_residual,
            intensity_fit,
            intensity_residual,
            csv: display(&csv),
        },
    )?;
    println!(
        "metric-compare: magnitude residual {magnitude_residual:e}, \
         intensity residual {intensity_residual:e} -> {}",
        display(&csv)
    );
    Ok(())
}

/// Coherent (Frobenius) vs intensity (intensity distance) convergence.
pub fn detection_compare(cfg: &Resolved) -> CliResult<()> {
    let out = OutDir::create(cfg)?;
    let est = match cfg.scheme {
        Some(scheme) => EstimatorConfig::noiseless(
            scheme,
            cfg.steps
                .as_ref()
                .map(|s| s[0])
                .unwrap_or_else(|| default_step(scheme)),
        ),
        None => EstimatorConfig::analytic(),
    };

    #[derive(Serialize)]
    struct Arm {
        detection: Detection,
        metric: Metric,
        param_count: usize,
        median_final: f64,
        median_iterations_to_1e6: Option<f64>,
        reached_1e6: usize,
        csv: String,
    }

    let mut arms = Vec::new();
    for (detection, metric, name) in [
        (Detection::Coherent, Metric::FrobeniusSq, "coherent"),
        (Detection::Intensity, Metric::IntensityDistance, "intensity"),
    ] {
        let (traces, rows) = run_arm(cfg, detection, metric, est)?;
        let csv = out.write_quantiles(&format!("detection_{name}.csv"), &rows)?;
        let mut to_thresh: Vec<f64> = traces
            .iter()
            .map(|t| {
                t.iterations_to(1e-6)
                    .map(|i| i as f64)
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        to_thresh.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = to_thresh[to_thresh.len() / 2];
        let param_count = match detection {
            Detection::Coherent => cfg.ports * (cfg.layers + 1),
            Detection::Intensity => cfg.ports * cfg.layers,
        };
        arms.push(Arm {
            detection,
            metric,
            param_count,
            median_final: rows.last().unwrap().median,
            median_iterations_to_1e6: median.is_finite().then_some(median),
            reached_1e6: to_thresh.iter().filter(|v| v.is_finite()).count(),
            csv: display(&csv),
        });
        println!(
            "detection-compare {name}: {} params, median final {:e} -> {}",
            param_count,
            rows.last().unwrap().median,
            display(&csv)
        );
    }

    #[derive(Serialize)]
    struct Results {
        estimator: EstimatorConfig<f64>,
        arms: Vec<Arm>,
    }
    out.write_sidecar(
        "detection_compare.json",
        cfg,
        &Results { estimator: est, arms },
    )?;
    Ok(())
}

/// Optimize the intensity distance, then evaluate the magnitude distance at
/// each trial's final point; fit the origin-constrained slope.
pub fn distance_relation(cfg: &Resolved) -> CliResult<()> {
    let out = OutDir::create(cfg)?;
    let est = match cfg.scheme {
        Some(scheme) => EstimatorConfig::noiseless(
            scheme,
            cfg.steps
                .as_ref()
                .map(|s| s[0])
                .unwrap_or_else(|| default_step(scheme)),
        ),
        None => EstimatorConfig::analytic(),
    };
    let (traces, _) = run_arm(cfg, Detection::Intensity, Metric::IntensityDistance, est)?;
    let tc = trial_config(cfg, Detection::Intensity, Metric::IntensityDistance, est);

    let mut rows = Vec::with_capacity(traces.len());
    let mut xy = Vec::with_capacity(traces.len());
    let mut excluded = 0usize;
    for (i, t) in traces.iter().enumerate() {
        let (device, target, _, _) = trial_environment(&tc, t.seed)?;
        let x = device.forward(&t.final_params)?;
        let dp = intensity_distance(&target, &x)?;
        let d = magnitude_distance(&target, &x)?;
        rows.push(vec![i.to_string(), t.seed.to_string(), fmt(dp), fmt(d)]);
        // Fully converged trials carry no slope information (0/0).
        if dp > 1e-14 {
            xy.push((d, dp));
        } else {
            excluded += 1;
        }
    }
    let csv = out.write_csv(
        "distance_relation.csv",
        "trial,seed,intensity_distance,magnitude_distance",
        &rows,
    )?;

    let sxx: f64 = xy.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = xy.iter().map(|(x, y)| x * y).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };

    #[derive(Serialize)]
    struct Results {
        estimator: EstimatorConfig<f64>,
        slope_through_origin: f64,
        trials_used: usize,
        trials_excluded: usize,
        csv: String,
    }
    out.write_sidecar(
        "distance_relation.json",
        cfg,
        &Results {
            estimator: est,
            slope_through_origin: slope,
            trials_used: xy.len(),
            trials_excluded: excluded,
            csv: display(&csv),
        },
    )?;
    println!(
        "distance-relation: slope {slope:.6} from {} trials ({excluded} excluded) -> {}",
        xy.len(),
        display(&csv)
    );
    Ok(())
}

/// Calibrate every shifter of a device with a polynomial drive nonlinearity.
pub fn calibrate(cfg: &Resolved) -> CliResult<()> {
    use rayon::prelude::*;

    let out = OutDir::create(cfg)?;
    let response = PhaseResponse::Polynomial {
        coefficients: vec![1.0, cfg.c2, cfg.c3],
    };
    let mut rng = RngSeed(cfg.seed).stream();
    let device: MplcDevice<f64> =
        MplcDevice::sample(cfg.ports, cfg.layers, cfg.detection, &mut rng)?
            .with_response(response);
    let target = haar_unitary(cfg.ports, &mut rng)?;
    let base = device.sample_initial_params(&mut rng);
    let kind = CostKind::normalized(cfg.metric);
    let params = device.param_count();
    let drive_range = (0.0, 2.0 * PI + 0.35);

    // Pre-calibration sweeps are noiseless by construction.
    let outcomes: Vec<Result<mplc_sim::ShifterCalibration<f64>, mplc_sim::Error>> = (0..params)
        .into_par_iter()
        .map(|k| {
            let mut probe = NoisyCostProbe::new(
                &device,
                &target,
                kind,
                0.0,
                RngSeed(cfg.seed.wrapping_add(1_000 + k as u64)).stream(),
            );
            calibrate_shifter(&mut probe, &base, k, drive_range, cfg.knots, 32)
        })
        .collect();

    let mut rows = Vec::with_capacity(params);
    let mut set = CalibrationSet::new();
    let mut failures = 0usize;
    for (k, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(c) => {
                rows.push(vec![
                    k.to_string(),
                    "ok".to_string(),
                    fmt(c.pre_residual),
                    fmt(c.post_residual),
                    fmt(c.post_residual / c.pre_residual),
                ]);
                set.insert(c.table.clone());
            }
            Err(e) => {
                failures += 1;
                rows.push(vec![
                    k.to_string(),
                    format!("failed: {e}").replace(',', ";"),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
            }
        }
    }
    let csv = out.write_csv(
        "calibration_report.csv",
        "shifter,status,pre_residual,post_residual,ratio",
        &rows,
    )?;

    let tables_path = out.path("correction_tables.json");
    {
        let mut file = std::fs::File::create(&tables_path)?;
        serde_json::to_writer_pretty(&mut file, &set)
            .map_err(|e| CliError::Runtime(format!("writing correction tables: {e}")))?;
        use std::io::Write;
        file.write_all(b"\n")?;
    }

    // Gradient-exactness restoration check at a table-grid-aligned point.
    let mut grad_results = None;
    if failures == 0 {
        let grid = |k: usize| 2.0 * PI * ((k * 7) % cfg.knots) as f64 / cfg.knots as f64;
        let point = ParamVector((0..params).map(grid).collect());
        let mut probe = NoisyCostProbe::new(&device, &target, kind, 0.0, RngSeed(cfg.seed).stream());
        let before = corrected_gradient_error(&mut probe, &CalibrationSet::new(), &point, FRAC_PI_2)?;
        let after = corrected_gradient_error(&mut probe, &set, &point, FRAC_PI_2)?;
        grad_results = Some((before, after));
    }

    #[derive(Serialize)]
    struct Results {
        shifters: usize,
        failures: usize,
        gradient_error_uncorrected: Option<f64>,
        gradient_error_corrected: Option<f64>,
        report_csv: String,
        tables_json: String,
    }
    out.write_sidecar(
        "calibrate.json",
        cfg,
        &Results {
            shifters: params,
            failures,
            gradient_error_uncorrected: grad_results.map(|g| g.0),
            gradient_error_corrected: grad_results.map(|g| g.1),
            report_csv: display(&csv),
            tables_json: display(&tables_path),
        },
    )?;
    match grad_results {
        Some((before, after)) => println!(
            "calibrate: {params} shifters, gradient error {before:e} -> {after:e}, report {}",
            display(&csv)
        ),
        None => println!(
            "calibrate: {params} shifters, {failures} failed, report {}",
            display(&csv)
        ),
    }

    if failures > 0 {
        return Err(CliError::Runtime(format!(
            "{failures} shifter(s) failed to calibrate"
        )));
    }
    Ok(())
}
