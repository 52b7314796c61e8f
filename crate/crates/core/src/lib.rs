//! Simulation library for programmable photonic unitary converters.
//!
//! Models an MPLC-style converter (fixed unitary layers interleaved with
//! phase shifter arrays), the matrix distances used to configure it under
//! coherent or intensity detection, and gradient measurement by finite
//! differences: because every single-shifter cost sweep is an exact
//! sinusoid, the sinc-corrected central difference recovers the analytical
//! gradient at any step size, which is what makes large-step (noise-robust)
//! gradient measurement possible. On top of that sit an L-BFGS optimizer
//! with per-trial tracing and a phase-shifter linearity calibrator.
//!
//! All numerics are generic over the real scalar (`f32`/`f64`); the `*64`
//! aliases below fix the reference `f64` precision.

pub mod calibration;
pub mod device;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod scalar;

pub use calibration::{
    build_correction, calibrate_shifter, corrected_gradient_error, sweep_and_fit, CalibrationSet,
    CorrectionTable, PhaseResponse, ShifterCalibration,
};
pub use device::{
    sweep_cost, AffineDecomposition, Detection, DeviceSpec, LayerSource, MplcDevice, ParamVector,
};
pub use error::{Error, Result};
pub use estimator::{
    estimate_gradient, sinc, EstimatorConfig, NoiseKind, NoiseMode, NoisyCostProbe, Scheme,
};
pub use linalg::{haar_unitary, matmul, ComplexMatrix, RngSeed};
pub use metrics::{
    cost, fit_sinusoid, frobenius_cost, horn_polyhedron_contains, intensity_distance,
    magnitude_distance, normalized_cost, CostKind, Metric, SinusoidFit,
};
pub use optimizer::{
    minimize, quantile_sorted, run_single_trial, run_trials, summarize, trial_environment,
    FnObjective, Objective, OptimizerOptions, ProbeObjective, QuantileRow, Termination, TraceMeta,
    TrialConfig, TrialTrace,
};
pub use scalar::Scalar;

/// Reference-precision aliases.
pub type ComplexMatrix64 = ComplexMatrix<f64>;
pub type MplcDevice64 = MplcDevice<f64>;
pub type ParamVector64 = ParamVector<f64>;
pub type SinusoidFit64 = SinusoidFit<f64>;
pub type EstimatorConfig64 = EstimatorConfig<f64>;
pub type TrialTrace64 = TrialTrace<f64>;
pub type TrialConfig64 = TrialConfig<f64>;

/// Single-precision aliases, mainly for size/speed experiments.
pub type ComplexMatrix32 = ComplexMatrix<f32>;
pub type MplcDevice32 = MplcDevice<f32>;
pub type ParamVector32 = ParamVector<f32>;
