//! Finite-difference gradient estimators over measured costs.
//!
//! The single-phase cost response of the converter is an exact sinusoid, so
//! the central difference at step `h` measures `dg/dφ · sinc(h)` exactly;
//! dividing by `sinc(h) = sin(h)/h` recovers the analytical gradient at any
//! step in (0, π). Forward and backward differences enjoy no such identity
//! and keep their usual O(h) truncation error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{MplcDevice, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::metrics::{cost, CostKind};
use crate::scalar::Scalar;

/// Unnormalized sinc: `sin(h)/h`, with the removable singularity at 0.
pub fn sinc<T: Scalar>(h: T) -> T {
    if h == T::zero() {
        T::one()
    } else {
        h.sin() / h
    }
}

/// Gradient measurement scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `[g(φ+h) − g(φ−h)] / (2h·sinc(h))`: exact for sinusoidal responses.
    CentralSinc,
    /// `[g(φ+h) − g(φ−h)] / (2h)`: plain central difference.
    CentralPlain,
    /// `[g(φ+h) − g(φ)] / h`; the base cost is measured once per gradient.
    Forward,
    /// `[g(φ) − g(φ−h)] / h`; the base cost is measured once per gradient.
    Backward,
    /// Closed-form gradient from the device model; no cost measurements.
    Analytic,
}

/// How measurement noise correlates across the probes of one gradient.
///
/// `Paired` gives each ± pair of a central difference one shared noise draw,
/// as in a differential measurement, so the pair difference cancels the
/// noise; forward/backward probes always draw independently. `Fresh` draws
/// independently for every probe — the pessimistic model of fully
/// independent measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    #[default]
    Paired,
    Fresh,
}

/// How a noise draw ε enters a measured cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// measured = true + ε², ε ~ N(0, σ²). Non-negative, mean σ².
    #[default]
    SquaredGaussian,
    /// measured = true + ε, ε ~ N(0, σ²). Zero-mean alternative.
    AdditiveGaussian,
}

/// Estimator configuration: scheme, step, and the noise level used when
/// probes are built from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig<T> {
    pub scheme: Scheme,
    /// Step h in radians (ignored by `Analytic`).
    pub step: T,
    /// σ of the measurement noise for probes built from this config.
    pub noise_sigma: T,
    pub noise_mode: NoiseMode,
}

impl<T: Scalar> EstimatorConfig<T> {
    /// Sinc-corrected central difference at the noise-optimal step π/2.
    pub fn central_sinc_default() -> Self {
        Self::noiseless(Scheme::CentralSinc, T::FRAC_PI_2())
    }

    /// Forward difference at the accuracy-limited step 2⁻¹⁸.
    pub fn forward_default() -> Self {
        Self::noiseless(Scheme::Forward, T::from_f64((0.5f64).powi(18)))
    }

    pub fn analytic() -> Self {
        Self::noiseless(Scheme::Analytic, T::zero())
    }

    pub fn noiseless(scheme: Scheme, step: T) -> Self {
        Self {
            scheme,
            step,
            noise_sigma: T::zero(),
            noise_mode: NoiseMode::default(),
        }
    }

    pub fn with_noise(mut self, sigma: T, mode: NoiseMode) -> Self {
        self.noise_sigma = sigma;
        self.noise_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma < T::zero() || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig("noise sigma must be finite and >= 0".into()));
        }
        match self.scheme {
            Scheme::Analytic => Ok(()),
            Scheme::CentralSinc => {
                if !(self.step > T::zero() && self.step < T::PI()) {
                    Err(Error::InvalidConfig(format!(
                        "sinc-corrected central difference needs 0 < h < π, got {}",
                        self.step
                    )))
                } else {
                    Ok(())
                }
            }
            _ => {
                if !(self.step > T::zero() && self.step.is_finite()) {
                    Err(Error::InvalidConfig(format!(
                        "finite-difference step must be positive, got {}",
                        self.step
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Cost measurements one gradient estimate performs for `params`
    /// parameters.
    pub fn evals_per_gradient(&self, params: usize) -> usize {
        match self.scheme {
            Scheme::CentralSinc | Scheme::CentralPlain => 2 * params,
            Scheme::Forward | Scheme::Backward => params + 1,
            Scheme::Analytic => 0,
        }
    }
}

/// A cost measurement channel for one (device, target, metric) triple with
/// optional measurement noise.
#[derive(Debug)]
pub struct NoisyCostProbe<'a, T, R> {
    device: &'a MplcDevice<T>,
    target: &'a ComplexMatrix<T>,
    kind: CostKind,
    sigma: T,
    noise_kind: NoiseKind,
    rng: R,
    evals: u64,
}

impl<'a, T: Scalar, R: Rng> NoisyCostProbe<'a, T, R> {
    pub fn new(
        device: &'a MplcDevice<T>,
        target: &'a ComplexMatrix<T>,
        kind: CostKind,
        sigma: T,
        rng: R,
    ) -> Self {
        Self {
            device,
            target,
            kind,
            sigma,
            noise_kind: NoiseKind::default(),
            rng,
            evals: 0,
        }
    }

    pub fn with_noise_kind(mut self, noise_kind: NoiseKind) -> Self {
        self.noise_kind = noise_kind;
        self
    }

    pub fn device(&self) -> &MplcDevice<T> {
        self.device
    }

    pub fn target(&self) -> &ComplexMatrix<T> {
        self.target
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Number of noisy measurements performed so far.
    pub fn evals(&self) -> u64 {
        self.evals
    }

    /// Noise-free cost; does not count as a measurement.
    pub fn true_cost(&self, p: &ParamVector<T>) -> Result<T> {
        let x = self.device.forward(p)?;
        cost(self.target, &x, self.kind)
    }

    fn noise_draw(&mut self) -> T {
        let eps = T::sample_standard_normal(&mut self.rng) * self.sigma;
        match self.noise_kind {
            NoiseKind::SquaredGaussian => eps * eps,
            NoiseKind::AdditiveGaussian => eps,
        }
    }

    /// One measurement: true cost plus a fresh noise draw (exact at σ = 0).
    pub fn measure(&mut self, p: &ParamVector<T>) -> Result<T> {
        let c = self.true_cost(p)?;
        self.evals += 1;
        if self.sigma == T::zero() {
            return Ok(c);
        }
        let n = self.noise_draw();
        Ok(c + n)
    }

    /// Two measurements that share a single noise draw (a differential
    /// probe pair). Counts as two measurements.
    pub fn measure_pair(&mut self, a: &ParamVector<T>, b: &ParamVector<T>) -> Result<(T, T)> {
        let ca = self.true_cost(a)?;
        let cb = self.true_cost(b)?;
        self.evals += 2;
        if self.sigma == T::zero() {
            return Ok((ca, cb));
        }
        let n = self.noise_draw();
        Ok((ca + n, cb + n))
    }
}

/// Estimate the gradient of the probe's cost at `p` under the configured
/// scheme. Central schemes probe at φ_k ± h (2P measurements), forward and
/// backward measure the base cost once and reuse it (P+1 measurements),
/// and `Analytic` delegates to the device model (no measurements, ignores
/// noise).
pub fn estimate_gradient<T: Scalar, R: Rng>(
    probe: &mut NoisyCostProbe<'_, T, R>,
    p: &ParamVector<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let params = p.len();
    let h = cfg.step;
    match cfg.scheme {
        Scheme::Analytic => probe.device.analytic_gradient(p, probe.target, probe.kind),
        Scheme::CentralSinc | Scheme::CentralPlain => {
            let denom = match cfg.scheme {
                Scheme::CentralSinc => (h + h) * sinc(h),
                _ => h + h,
            };
            let mut grad = Vec::with_capacity(params);
            for k in 0..params {
                let plus = p.with_offset(k, h);
                let minus = p.with_offset(k, -h);
                let (gp, gm) = match cfg.noise_mode {
                    NoiseMode::Paired => probe.measure_pair(&plus, &minus)?,
                    NoiseMode::Fresh => {
                        let gp = probe.measure(&plus)?;
                        let gm = probe.measure(&minus)?;
                        (gp, gm)
                    }
                };
                grad.push((gp - gm) / denom);
            }
            Ok(grad)
        }
        Scheme::Forward => {
            let base = probe.measure(p)?;
            (0..params)
                .map(|k| Ok((probe.measure(&p.with_offset(k, h))? - base) / h))
                .collect()
        }
        Scheme::Backward => {
            let base = probe.measure(p)?;
            (0..params)
                .map(|k| Ok((base - probe.measure(&p.with_offset(k, -h))?) / h))
                .collect()
        }
    }
}
