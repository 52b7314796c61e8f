//! Phase-shifter linearity pre-calibration.
//!
//! A linear drive-to-phase response makes every single-shifter cost sweep an
//! exact sinusoid; a nonlinear response distorts it. Calibration recovers
//! the per-shifter phase-vs-drive curve from cost measurements alone and
//! inverts it into a monotone piecewise-linear correction table, after which
//! commanded phases behave as if the shifter were linear.
//!
//! The extraction works from two dense drive sweeps of the same shifter that
//! differ in one *other* shifter's setting, so the two cost oscillations sit
//! at different phase offsets. Each sample's instantaneous phase comes from
//! the normalized arcsine of whichever sweep is better conditioned there,
//! with branch tracking along the monotone sweep; using two offsets means
//! neither oscillation's turning points can hide information.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::ParamVector;
use crate::error::{Error, Result};
use crate::estimator::{sinc, NoisyCostProbe};
use crate::metrics::{fit_sinusoid, SinusoidFit};
use crate::scalar::Scalar;

/// Drive-to-phase response of a single shifter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseResponse<T> {
    /// phase == drive, exactly.
    Ideal,
    /// phase = c₁·v + c₂·v² + …, coefficients in ascending powers starting
    /// at the linear term.
    Polynomial { coefficients: Vec<T> },
}

impl<T: Scalar> PhaseResponse<T> {
    /// Quadratic response `v + c2·v²`.
    pub fn quadratic(c2: T) -> Self {
        PhaseResponse::Polynomial {
            coefficients: vec![T::one(), c2],
        }
    }

    /// Cubic response `v + c2·v² + c3·v³`.
    pub fn cubic(c2: T, c3: T) -> Self {
        PhaseResponse::Polynomial {
            coefficients: vec![T::one(), c2, c3],
        }
    }

    pub fn is_ideal(&self) -> bool {
        matches!(self, PhaseResponse::Ideal)
    }

    /// Phase produced by drive `v`.
    pub fn apply(&self, v: T) -> T {
        match self {
            PhaseResponse::Ideal => v,
            PhaseResponse::Polynomial { coefficients } => {
                let mut acc = T::zero();
                for &c in coefficients.iter().rev() {
                    acc = (acc + c) * v;
                }
                acc
            }
        }
    }
}

/// Monotone piecewise-linear map from desired phase (relative to the sweep
/// start, wrapped into [0, 2π)) to drive signal, for one shifter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTable<T> {
    pub shifter: usize,
    /// `(desired_phase, drive)` pairs at uniform phases 0..=2π.
    pub knots: Vec<(T, T)>,
}

impl<T: Scalar> CorrectionTable<T> {
    /// Drive that realizes `desired` (taken mod 2π).
    pub fn drive_for(&self, desired: T) -> T {
        let two_pi = T::PI() + T::PI();
        let mut psi = desired % two_pi;
        if psi < T::zero() {
            psi += two_pi;
        }
        let knots = &self.knots;
        // Binary search for the segment containing psi.
        let mut lo = 0usize;
        let mut hi = knots.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if knots[mid].0 <= psi {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (p0, v0) = knots[lo];
        let (p1, v1) = knots[hi];
        let span = p1 - p0;
        if span <= T::zero() {
            return v0;
        }
        v0 + (psi - p0) / span * (v1 - v0)
    }

    /// Largest |drive − phase| over the knots; zero for an identity table.
    pub fn max_identity_deviation(&self) -> T {
        self.knots
            .iter()
            .map(|&(p, v)| (v - p).abs())
            .fold(T::zero(), T::max)
    }
}

/// Per-device collection of correction tables. Shifters without a table are
/// passed through unchanged.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CalibrationSet<T> {
    pub tables: BTreeMap<usize, CorrectionTable<T>>,
}

impl<T: Scalar> CalibrationSet<T> {
    pub fn new() -> Self {
        Self { tables: BTreeMap::new() }
    }

    pub fn insert(&mut self, table: CorrectionTable<T>) {
        self.tables.insert(table.shifter, table);
    }

    pub fn get(&self, shifter: usize) -> Option<&CorrectionTable<T>> {
        self.tables.get(&shifter)
    }

    /// Map desired phases to drive signals through the stored tables.
    pub fn map_params(&self, desired: &ParamVector<T>) -> ParamVector<T> {
        ParamVector(
            desired
                .as_slice()
                .iter()
                .enumerate()
                .map(|(k, &psi)| match self.tables.get(&k) {
                    Some(table) => table.drive_for(psi),
                    None => psi,
                })
                .collect(),
        )
    }
}

/// Sweep one shifter's drive over `drive_samples` (others held at `base`)
/// and fit a sinusoid to the measured cost. The residual quantifies the
/// departure from linearity: ~0 for an ideal response.
///
/// Needs at least 8 samples spanning at least 7π/4 of drive.
pub fn sweep_and_fit<T: Scalar, R: Rng>(
    probe: &mut NoisyCostProbe<'_, T, R>,
    base: &ParamVector<T>,
    shifter: usize,
    drive_samples: &[T],
) -> Result<(SinusoidFit<T>, T)> {
    if drive_samples.len() < 8 {
        return Err(Error::InsufficientSamples(format!(
            "calibration sweep needs at least 8 samples, got {}",
            drive_samples.len()
        )));
    }
    let lo = drive_samples.iter().fold(T::infinity(), |a, &b| a.min(b));
    let hi = drive_samples.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let min_span = T::from_f64(7.0) * T::FRAC_PI_4();
    if hi - lo < min_span {
        return Err(Error::InsufficientSamples(
            "sweep span too small to determine the oscillation period".into(),
        ));
    }
    let samples = drive_samples
        .iter()
        .map(|&v| Ok((v, probe.measure(&base.with_value(shifter, v))?)))
        .collect::<Result<Vec<_>>>()?;
    fit_sinusoid(&samples)
}

/// One dense sweep's normalized oscillation.
struct SweepSignal<T> {
    normalized: Vec<T>,
    raw: Vec<T>,
}

fn analyze_signal<T: Scalar>(values: &[T]) -> Result<SweepSignal<T>> {
    let n = values.len();
    let mut highs: Vec<T> = Vec::new();
    let mut lows: Vec<T> = Vec::new();
    for i in 1..n - 1 {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        if b > a && b > c {
            highs.push(refine_extremum(a, b, c));
        } else if b < a && b < c {
            lows.push(refine_extremum(a, b, c));
        }
    }
    if highs.is_empty() || lows.is_empty() {
        return Err(Error::InsufficientSamples(
            "drive sweep does not cover a full oscillation period".into(),
        ));
    }
    let count_h = T::from_f64(highs.len() as f64);
    let count_l = T::from_f64(lows.len() as f64);
    let high = highs.into_iter().sum::<T>() / count_h;
    let low = lows.into_iter().sum::<T>() / count_l;
    let amp = (high - low) / T::from_f64(2.0);
    let offset = (high + low) / T::from_f64(2.0);
    let floor = high.abs().max(low.abs()).max(T::one()) * T::epsilon() * T::from_f64(1e3);
    if amp <= floor {
        return Err(Error::InvalidConfig(
            "cost oscillation amplitude too small to calibrate against".into(),
        ));
    }
    let normalized = values
        .iter()
        .map(|&g| ((g - offset) / amp).min(T::one()).max(-T::one()))
        .collect();
    Ok(SweepSignal { normalized, raw: values.to_vec() })
}

/// Peak value of the parabola through three consecutive samples.
fn refine_extremum<T: Scalar>(a: T, b: T, c: T) -> T {
    let half = T::from_f64(0.5);
    let num = c - a;
    let den = a - b - b + c;
    if den.abs() <= T::epsilon() * a.abs().max(b.abs()).max(c.abs()) {
        return b;
    }
    b - num * num / (den * T::from_f64(8.0)) * half * T::from_f64(2.0)
}

/// Unwrap the instantaneous phase of a normalized sinusoid sampled along a
/// monotone phase path. Forces monotonicity; a jump larger than π/2 between
/// consecutive samples means the path folded back (non-monotone response).
fn unwrap_monotone<T: Scalar>(signal: &SweepSignal<T>) -> Result<Vec<T>> {
    let two_pi = T::PI() + T::PI();
    let back_tol = T::from_f64(1e-9);
    let s = &signal.normalized;
    let raw0 = s[0].asin();
    let increasing = signal.raw[1] >= signal.raw[0];
    let mut theta = Vec::with_capacity(s.len());
    theta.push(if increasing { raw0 } else { T::PI() - raw0 });
    for i in 1..s.len() {
        let prev = theta[i - 1];
        let target = prev - back_tol;
        let raw_a = s[i].asin();
        let raw_b = T::PI() - raw_a;
        let next_a = raw_a + two_pi * ((target - raw_a) / two_pi).ceil();
        let next_b = raw_b + two_pi * ((target - raw_b) / two_pi).ceil();
        let next = next_a.min(next_b);
        if next - prev > T::FRAC_PI_2() {
            return Err(Error::NonMonotone(
                "instantaneous phase jumped by more than π/2 between samples; \
                 the response appears to fold back within the sweep range"
                    .into(),
            ));
        }
        theta.push(next);
    }
    Ok(theta)
}

/// Fuse the two unwrapped phase profiles into one, using per-sample
/// conditioning weights. Returns `None` when the two oscillations are too
/// close to in-phase (mod π) to complement each other.
fn stitch_phases<T: Scalar>(
    theta1: &[T],
    s1: &[T],
    theta2: &[T],
    s2: &[T],
) -> Result<Option<Vec<T>>> {
    let good = T::from_f64(0.8);
    let mut acc = T::zero();
    let mut count = 0usize;
    for i in 0..theta1.len() {
        if s1[i].abs() <= good && s2[i].abs() <= good {
            acc += theta2[i] - theta1[i];
            count += 1;
        }
    }
    if count < 8 {
        return Ok(None);
    }
    let delta = acc / T::from_f64(count as f64);
    if delta.sin().abs() < T::from_f64(0.35) {
        return Ok(None);
    }
    // The offset between the two profiles must stay constant; drift means
    // one of them silently folded at an oscillation turning point.
    let drift_tol = T::from_f64(0.05);
    for i in 0..theta1.len() {
        if (theta2[i] - theta1[i] - delta).abs() > drift_tol {
            return Err(Error::NonMonotone(
                "the two calibration sweeps disagree on the accumulated phase; \
                 the response appears non-monotone"
                    .into(),
            ));
        }
    }
    let one = T::one();
    let fused = (0..theta1.len())
        .map(|i| {
            let w1 = (one - s1[i] * s1[i]).max(T::zero());
            let w2 = (one - s2[i] * s2[i]).max(T::zero());
            (w1 * theta1[i] + w2 * (theta2[i] - delta)) / (w1 + w2)
        })
        .collect();
    Ok(Some(fused))
}

/// Build a correction table for `shifter` by sweeping its drive over
/// `drive_range` and inverting the recovered phase-vs-drive curve at
/// `knots` uniform desired phases spanning [0, 2π]. The device needs at
/// least two shifters; calibration leaves `base` untouched.
pub fn build_correction<T: Scalar, R: Rng>(
    probe: &mut NoisyCostProbe<'_, T, R>,
    base: &ParamVector<T>,
    shifter: usize,
    drive_range: (T, T),
    knots: usize,
) -> Result<CorrectionTable<T>> {
    if knots < 8 {
        return Err(Error::InvalidConfig("need at least 8 knots".into()));
    }
    let params = base.len();
    if shifter >= params {
        return Err(Error::IndexOutOfRange { index: shifter, len: params });
    }
    if params < 2 {
        return Err(Error::InvalidConfig(
            "calibration needs a second shifter to offset between sweeps".into(),
        ));
    }
    let (v_lo, v_hi) = drive_range;
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN bounds
    if !(v_hi > v_lo) {
        return Err(Error::InvalidConfig("empty drive range".into()));
    }

    let samples = 4096.max(knots * 32);
    let step = (v_hi - v_lo) / T::from_f64((samples - 1) as f64);
    let drives: Vec<T> = (0..samples)
        .map(|i| v_lo + step * T::from_f64(i as f64))
        .collect();

    let sweep = |probe: &mut NoisyCostProbe<'_, T, R>, other: usize, bump: T| -> Result<Vec<T>> {
        let mut point = base.with_offset(other, bump);
        drives
            .iter()
            .map(|&v| {
                point.0[shifter] = v;
                probe.measure(&point)
            })
            .collect()
    };

    let base_values = sweep(probe, (shifter + 1) % params, T::zero())?;
    let sig1 = analyze_signal(&base_values)?;
    let theta1 = unwrap_monotone(&sig1)?;

    // Partner shifters for the offset sweep. A partner in the same phase
    // array as `shifter` leaves the Frobenius cost's oscillation phase
    // untouched (that cost is separable within one array), so prefer
    // partners from other arrays.
    let ports = probe.device().n_ports();
    let mut partners: Vec<usize> = Vec::new();
    if params > ports {
        partners.push((shifter + ports) % params);
        partners.push((shifter + ports + 1) % params);
        partners.push((shifter + 2 * ports) % params);
    }
    partners.push((shifter + 1) % params);
    partners.retain(|&o| o != shifter);

    // Find a partner/offset pair that puts the two oscillations usefully
    // out of phase.
    let mut fused = None;
    'search: for &other in &partners {
        for &bump in &[1.0, 0.6, 1.7, 2.4] {
            let values = sweep(probe, other, T::from_f64(bump))?;
            let sig2 = analyze_signal(&values)?;
            let theta2 = unwrap_monotone(&sig2)?;
            if let Some(f) = stitch_phases(&theta1, &sig1.normalized, &theta2, &sig2.normalized)? {
                fused = Some(f);
                break 'search;
            }
        }
    }
    let mut theta = fused.ok_or_else(|| {
        Error::InvalidConfig(
            "could not find a sweep offset separating the two oscillations".into(),
        )
    })?;

    // Anchor the phase at the start of the range.
    let theta0 = theta[0];
    for t in theta.iter_mut() {
        *t -= theta0;
    }

    let two_pi = T::PI() + T::PI();
    let span = theta[samples - 1];
    let slack = (span / T::from_f64(samples as f64)) * T::from_f64(2.0);
    if span + slack < two_pi {
        return Err(Error::InsufficientSamples(format!(
            "drive range covers only {span} radians of phase; a full 2π is needed"
        )));
    }

    let knot_step = two_pi / T::from_f64(knots as f64);
    let mut table = Vec::with_capacity(knots + 1);
    let mut cursor = 0usize;
    for j in 0..=knots {
        let psi = knot_step * T::from_f64(j as f64);
        while cursor + 1 < samples && theta[cursor + 1] <= psi {
            cursor += 1;
        }
        let i = cursor.min(samples - 2);
        let (t0, t1) = (theta[i], theta[i + 1]);
        let seg = t1 - t0;
        let drive = if seg > T::zero() {
            drives[i] + (psi - t0) / seg * (drives[i + 1] - drives[i])
        } else {
            drives[i]
        };
        table.push((psi, drive));
    }

    Ok(CorrectionTable { shifter, knots: table })
}

/// Outcome of calibrating one shifter: sine-fit residuals before and after
/// applying the correction (both from uniform 2π sweeps).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShifterCalibration<T> {
    pub shifter: usize,
    pub pre_residual: T,
    pub post_residual: T,
    pub table: CorrectionTable<T>,
}

/// Calibrate one shifter and measure the residual improvement with
/// `check_points` uniformly spaced verification phases.
pub fn calibrate_shifter<T: Scalar, R: Rng>(
    probe: &mut NoisyCostProbe<'_, T, R>,
    base: &ParamVector<T>,
    shifter: usize,
    drive_range: (T, T),
    knots: usize,
    check_points: usize,
) -> Result<ShifterCalibration<T>> {
    let two_pi = T::PI() + T::PI();
    let sweep_drives: Vec<T> = (0..check_points)
        .map(|i| two_pi * T::from_f64(i as f64) / T::from_f64(check_points as f64))
        .collect();
    let (_, pre_residual) = sweep_and_fit(probe, base, shifter, &sweep_drives)?;

    let table = build_correction(probe, base, shifter, drive_range, knots)?;

    let post_samples = sweep_drives
        .iter()
        .map(|&psi| {
            let drive = table.drive_for(psi);
            let c = probe.measure(&base.with_value(shifter, drive))?;
            Ok((psi, c))
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, post_residual) = fit_sinusoid(&post_samples)?;

    Ok(ShifterCalibration {
        shifter,
        pre_residual,
        post_residual,
        table,
    })
}

/// Max-norm disagreement between a sinc-corrected central-difference
/// gradient measured through the correction tables (in desired-phase space)
/// and the device's analytic gradient at the realized drives. Most accurate
/// when the evaluation phases and step align with the table grid.
pub fn corrected_gradient_error<T: Scalar, R: Rng>(
    probe: &mut NoisyCostProbe<'_, T, R>,
    set: &CalibrationSet<T>,
    desired: &ParamVector<T>,
    step: T,
) -> Result<T> {
    let drives = set.map_params(desired);
    let oracle = probe
        .device()
        .analytic_gradient(&drives, probe.target(), probe.kind())?;
    let denom = (step + step) * sinc(step);
    let mut worst = T::zero();
    for (k, &expect) in oracle.iter().enumerate() {
        let plus = probe.measure(&set.map_params(&desired.with_offset(k, step)))?;
        let minus = probe.measure(&set.map_params(&desired.with_offset(k, -step)))?;
        let est = (plus - minus) / denom;
        worst = worst.max((est - expect).abs());
    }
    Ok(worst)
}
