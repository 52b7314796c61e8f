//! Limited-memory quasi-Newton minimization over phase parameters.
//!
//! L-BFGS with the two-loop recursion and a strong Wolfe line search
//! (sufficient decrease c₁, curvature c₂), plus the trial harness that
//! samples fresh devices and targets per seed and summarizes convergence
//! quantiles across trials.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{Detection, MplcDevice, ParamVector};
use crate::error::{Error, Result};
use crate::estimator::{estimate_gradient, EstimatorConfig, NoisyCostProbe};
use crate::linalg::{haar_unitary, RngSeed};
use crate::metrics::{CostKind, Metric};
use crate::scalar::Scalar;

/// Minimization callbacks. `cost` and `gradient` are what the optimizer
/// consumes (possibly noisy measurements); `trace_value` is what gets
/// recorded per accepted iterate and defaults to `cost`.
pub trait Objective<T: Scalar> {
    fn cost(&mut self, p: &ParamVector<T>) -> Result<T>;
    fn gradient(&mut self, p: &ParamVector<T>) -> Result<Vec<T>>;

    fn trace_value(&mut self, p: &ParamVector<T>) -> Result<T> {
        self.cost(p)
    }
}

/// Objective built from plain closures (used for tests and custom costs).
pub struct FnObjective<F, G> {
    pub cost_fn: F,
    pub grad_fn: G,
}

impl<T, F, G> Objective<T> for FnObjective<F, G>
where
    T: Scalar,
    F: FnMut(&ParamVector<T>) -> T,
    G: FnMut(&ParamVector<T>) -> Vec<T>,
{
    fn cost(&mut self, p: &ParamVector<T>) -> Result<T> {
        Ok((self.cost_fn)(p))
    }

    fn gradient(&mut self, p: &ParamVector<T>) -> Result<Vec<T>> {
        Ok((self.grad_fn)(p))
    }
}

/// Objective backed by a measurement probe and a gradient estimator.
/// Traces record the noise-free normalized cost.
pub struct ProbeObjective<'a, T, R> {
    pub probe: NoisyCostProbe<'a, T, R>,
    pub config: EstimatorConfig<T>,
    /// When true (default), line searches evaluate the noise-free cost and
    /// measurement noise enters the optimization only through the gradient
    /// estimates — noise is injected into the difference-quotient terms,
    /// not into every cost comparison. Set false to feed the optimizer raw
    /// noisy measurements everywhere.
    pub exact_line_search: bool,
}

impl<'a, T: Scalar, R: rand::Rng> ProbeObjective<'a, T, R> {
    pub fn new(probe: NoisyCostProbe<'a, T, R>, config: EstimatorConfig<T>) -> Self {
        Self {
            probe,
            config,
            exact_line_search: true,
        }
    }
}

impl<T: Scalar, R: rand::Rng> Objective<T> for ProbeObjective<'_, T, R> {
    fn cost(&mut self, p: &ParamVector<T>) -> Result<T> {
        if self.exact_line_search {
            self.probe.true_cost(p)
        } else {
            self.probe.measure(p)
        }
    }

    fn gradient(&mut self, p: &ParamVector<T>) -> Result<Vec<T>> {
        estimate_gradient(&mut self.probe, p, &self.config)
    }

    fn trace_value(&mut self, p: &ParamVector<T>) -> Result<T> {
        self.probe.true_cost(p)
    }
}

/// L-BFGS options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions<T> {
    /// Number of (s, y) history pairs kept.
    pub memory: usize,
    /// Stop when the gradient max-norm falls at or below this.
    pub gradient_tolerance: T,
    pub max_iterations: usize,
    /// Sufficient-decrease constant c₁.
    pub c1: T,
    /// Curvature constant c₂.
    pub c2: T,
    /// First trial step of each line search.
    pub initial_step: T,
}

impl<T: Scalar> Default for OptimizerOptions<T> {
    fn default() -> Self {
        Self {
            memory: 10,
            gradient_tolerance: T::from_f64(1e-12),
            max_iterations: 1000,
            c1: T::from_f64(1e-4),
            c2: T::from_f64(0.9),
            initial_step: T::one(),
        }
    }
}

impl<T: Scalar> OptimizerOptions<T> {
    // Negated comparisons below also reject NaN-valued options.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidConfig("memory must be at least 1".into()));
        }
        if !(T::zero() < self.c1 && self.c1 < self.c2 && self.c2 < T::one()) {
            return Err(Error::InvalidConfig(
                "line search needs 0 < c1 < c2 < 1".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.gradient_tolerance >= T::zero()) {
            return Err(Error::InvalidConfig("gradient tolerance must be >= 0".into()));
        }
        if !(self.initial_step > T::zero()) {
            return Err(Error::InvalidConfig("initial step must be positive".into()));
        }
        Ok(())
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
}

/// Metadata carried alongside a trace; filled in by the trial harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta<T> {
    pub estimator: Option<EstimatorConfig<T>>,
    pub metric: Option<Metric>,
    pub detection: Option<Detection>,
}

impl<T> Default for TraceMeta<T> {
    fn default() -> Self {
        Self {
            estimator: None,
            metric: None,
            detection: None,
        }
    }
}

/// One optimization run: recorded cost per accepted iterate (starting with
/// the initial point), the final parameters, and the stop reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialTrace<T> {
    pub seed: u64,
    pub costs: Vec<T>,
    pub final_params: ParamVector<T>,
    pub termination: Termination,
    pub meta: TraceMeta<T>,
}

impl<T: Scalar> TrialTrace<T> {
    pub fn final_cost(&self) -> T {
        *self.costs.last().expect("trace is never empty")
    }

    /// First iteration index at which the recorded cost is at or below
    /// `threshold`.
    pub fn iterations_to(&self, threshold: T) -> Option<usize> {
        self.costs.iter().position(|&c| c <= threshold)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

fn check_finite<T: Scalar>(value: T, what: &str) -> Result<T> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} evaluated to {value}")))
    }
}

fn check_finite_vec<T: Scalar>(v: Vec<T>, what: &str) -> Result<Vec<T>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} contains a non-finite component")))
    }
}

/// (step, gradient difference, 1/(step·difference)) memory entry.
type CurvaturePair<T> = (Vec<T>, Vec<T>, T);

struct LinePoint<T> {
    alpha: T,
    cost: T,
    grad: Vec<T>,
    slope: T,
}

/// Minimize `obj` from `p0`. Line-search failure is not an error: the trace
/// comes back with the reason recorded. Non-finite callback values abort
/// with a diagnostic.
pub fn minimize<T: Scalar, O: Objective<T>>(
    obj: &mut O,
    p0: ParamVector<T>,
    opts: &OptimizerOptions<T>,
) -> Result<TrialTrace<T>> {
    opts.validate()?;
    if p0.is_empty() {
        return Err(Error::EmptyInput("initial parameter vector"));
    }

    let mut p = p0;
    let mut cost = check_finite(obj.cost(&p)?, "cost")?;
    let mut grad = check_finite_vec(obj.gradient(&p)?, "gradient")?;
    let mut costs = vec![check_finite(obj.trace_value(&p)?, "trace value")?];

    let mut history: VecDeque<CurvaturePair<T>> = VecDeque::with_capacity(opts.memory);
    let mut termination = Termination::MaxIterations;

    for _ in 0..opts.max_iterations {
        if max_abs(&grad) <= opts.gradient_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }

        let mut dir = two_loop_direction(&grad, &history);
        let mut slope = dot(&dir, &grad);
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must also trigger the restart
        if !(slope < T::zero()) {
            // Not a descent direction (stale curvature); restart from
            // steepest descent.
            history.clear();
            dir = grad.iter().map(|&g| -g).collect();
            slope = -dot(&grad, &grad);
            if slope == T::zero() {
                termination = Termination::GradientTolerance;
                break;
            }
        }

        match line_search(obj, &p, &dir, cost, slope, opts)? {
            None => {
                termination = Termination::LineSearchFailure;
                break;
            }
            Some(accepted) => {
                let step: Vec<T> = dir.iter().map(|&d| d * accepted.alpha).collect();
                let y: Vec<T> = accepted
                    .grad
                    .iter()
                    .zip(&grad)
                    .map(|(&gn, &go)| gn - go)
                    .collect();
                let sy = dot(&step, &y);
                let threshold = T::epsilon()
                    * max_abs(&step).max(T::epsilon())
                    * max_abs(&y).max(T::epsilon());
                if sy > threshold {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    let rho = T::one() / sy;
                    history.push_back((step.clone(), y, rho));
                }

                p = ParamVector(
                    p.as_slice()
                        .iter()
                        .zip(&step)
                        .map(|(&x, &s)| x + s)
                        .collect(),
                );
                cost = accepted.cost;
                grad = accepted.grad;
                costs.push(check_finite(obj.trace_value(&p)?, "trace value")?);
            }
        }
    }

    if termination == Termination::MaxIterations && max_abs(&grad) <= opts.gradient_tolerance {
        termination = Termination::GradientTolerance;
    }

    Ok(TrialTrace {
        seed: 0,
        costs,
        final_params: p,
        termination,
        meta: TraceMeta::default(),
    })
}

fn two_loop_direction<T: Scalar>(grad: &[T], history: &VecDeque<CurvaturePair<T>>) -> Vec<T> {
    let mut q: Vec<T> = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * *yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * *si;
        }
    }
    q.iter().map(|&v| -v).collect()
}

fn eval_along<T: Scalar, O: Objective<T>>(
    obj: &mut O,
    p: &ParamVector<T>,
    dir: &[T],
    alpha: T,
) -> Result<LinePoint<T>> {
    let trial = ParamVector(
        p.as_slice()
            .iter()
            .zip(dir)
            .map(|(&x, &d)| x + alpha * d)
            .collect(),
    );
    let cost = check_finite(obj.cost(&trial)?, "cost")?;
    let grad = check_finite_vec(obj.gradient(&trial)?, "gradient")?;
    let slope = dot(&grad, dir);
    Ok(LinePoint { alpha, cost, grad, slope })
}

/// Strong Wolfe line search (bracket then zoom). `Ok(None)` means the
/// conditions could not be satisfied.
fn line_search<T: Scalar, O: Objective<T>>(
    obj: &mut O,
    p: &ParamVector<T>,
    dir: &[T],
    cost0: T,
    slope0: T,
    opts: &OptimizerOptions<T>,
) -> Result<Option<LinePoint<T>>> {
    const MAX_BRACKET: usize = 20;
    const MAX_ZOOM: usize = 40;
    let alpha_max = T::from_f64(1e4);

    let mut prev_alpha = T::zero();
    let mut prev_cost = cost0;
    let mut prev_slope = slope0;
    let mut prev_grad: Option<Vec<T>> = None;
    let mut alpha = opts.initial_step;

    for i in 0..MAX_BRACKET {
        let pt = eval_along(obj, p, dir, alpha)?;
        let armijo = cost0 + opts.c1 * pt.alpha * slope0;
        if pt.cost > armijo || (i > 0 && pt.cost >= prev_cost) {
            return zoom(
                obj, p, dir, cost0, slope0, opts,
                prev_alpha, prev_cost, prev_slope,
                pt.alpha, pt.cost,
                MAX_ZOOM,
            );
        }
        if pt.slope.abs() <= -opts.c2 * slope0 {
            return Ok(Some(pt));
        }
        if pt.slope >= T::zero() {
            return zoom(
                obj, p, dir, cost0, slope0, opts,
                pt.alpha, pt.cost, pt.slope,
                prev_alpha, prev_cost,
                MAX_ZOOM,
            );
        }
        prev_alpha = pt.alpha;
        prev_cost = pt.cost;
        prev_slope = pt.slope;
        prev_grad = Some(pt.grad);
        alpha *= T::from_f64(2.0);
        if alpha > alpha_max {
            break;
        }
    }
    // Exhausted the bracket without satisfying the curvature condition; if
    // the last point at least satisfied sufficient decrease, accept it.
    if let Some(grad) = prev_grad {
        if prev_alpha > T::zero() {
            return Ok(Some(LinePoint {
                alpha: prev_alpha,
                cost: prev_cost,
                grad,
                slope: prev_slope,
            }));
        }
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn zoom<T: Scalar, O: Objective<T>>(
    obj: &mut O,
    p: &ParamVector<T>,
    dir: &[T],
    cost0: T,
    slope0: T,
    opts: &OptimizerOptions<T>,
    mut lo: T,
    mut cost_lo: T,
    mut slope_lo: T,
    mut hi: T,
    mut cost_hi: T,
    max_zoom: usize,
) -> Result<Option<LinePoint<T>>> {
    for _ in 0..max_zoom {
        let width = (hi - lo).abs();
        if width <= T::epsilon() * lo.abs().max(hi.abs()).max(T::one()) {
            return Ok(None);
        }

        // Quadratic interpolation from (lo, cost_lo, slope_lo) and cost_hi,
        // safeguarded toward bisection.
        let delta = hi - lo;
        let denom = cost_hi - cost_lo - slope_lo * delta;
        let mut alpha = if denom.abs() > T::epsilon() {
            lo - slope_lo * delta * delta / (denom + denom)
        } else {
            lo + delta * T::from_f64(0.5)
        };
        let lo_bound = lo.min(hi) + width * T::from_f64(0.1);
        let hi_bound = lo.max(hi) - width * T::from_f64(0.1);
        if !alpha.is_finite() || alpha < lo_bound || alpha > hi_bound {
            alpha = lo + delta * T::from_f64(0.5);
        }

        let pt = eval_along(obj, p, dir, alpha)?;
        let armijo = cost0 + opts.c1 * pt.alpha * slope0;
        if pt.cost > armijo || pt.cost >= cost_lo {
            hi = pt.alpha;
            cost_hi = pt.cost;
        } else {
            if pt.slope.abs() <= -opts.c2 * slope0 {
                return Ok(Some(pt));
            }
            if pt.slope * (hi - lo) >= T::zero() {
                hi = lo;
                cost_hi = cost_lo;
            }
            lo = pt.alpha;
            cost_lo = pt.cost;
            slope_lo = pt.slope;
        }
    }
    Ok(None)
}

/// Configuration for a batch of independent optimization trials. Trial `t`
/// derives everything from seed `seed0 + t`: fresh Haar layers and target,
/// uniform [0, 2π) initial phases, and the probe's noise stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialConfig<T> {
    pub n_ports: usize,
    pub n_layers: usize,
    pub detection: Detection,
    pub metric: Metric,
    pub estimator: EstimatorConfig<T>,
    pub options: OptimizerOptions<T>,
    pub n_trials: usize,
    pub seed0: u64,
}

impl<T: Scalar> TrialConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("need at least one trial".into()));
        }
        if self.n_ports == 0 || self.n_layers == 0 {
            return Err(Error::InvalidConfig("ports and layers must be positive".into()));
        }
        self.estimator.validate()?;
        self.options.validate()
    }
}

/// What [`trial_environment`] reconstructs for a seed: the sampled device,
/// target, initial point, and the RNG stream in the state the trial's probe
/// continues from.
pub type TrialEnvironment<T> = (
    MplcDevice<T>,
    crate::linalg::ComplexMatrix<T>,
    ParamVector<T>,
    rand_chacha::ChaCha8Rng,
);

/// The device, target and initial point that trial `seed` works on, plus
/// the RNG stream in the state the trial's probe continues from. Everything
/// a trial does is reproducible from its seed through this function.
pub fn trial_environment<T: Scalar>(cfg: &TrialConfig<T>, seed: u64) -> Result<TrialEnvironment<T>> {
    let mut rng = RngSeed(seed).stream();
    let device = MplcDevice::sample(cfg.n_ports, cfg.n_layers, cfg.detection, &mut rng)?;
    let target = haar_unitary(cfg.n_ports, &mut rng)?;
    let p0 = device.sample_initial_params(&mut rng);
    Ok((device, target, p0, rng))
}

/// Run one trial at an explicit seed.
pub fn run_single_trial<T: Scalar>(cfg: &TrialConfig<T>, seed: u64) -> Result<TrialTrace<T>> {
    cfg.validate()?;
    let (device, target, p0, rng) = trial_environment(cfg, seed)?;
    let kind = CostKind::normalized(cfg.metric);
    let probe = NoisyCostProbe::new(&device, &target, kind, cfg.estimator.noise_sigma, rng);
    let mut obj = ProbeObjective::new(probe, cfg.estimator);
    let mut trace = minimize(&mut obj, p0, &cfg.options)?;
    trace.seed = seed;
    trace.meta = TraceMeta {
        estimator: Some(cfg.estimator),
        metric: Some(cfg.metric),
        detection: Some(cfg.detection),
    };
    Ok(trace)
}

/// Run `n_trials` independent trials (seeds `seed0..seed0+n`) across the
/// current thread pool. Output order is by trial index regardless of
/// scheduling.
pub fn run_trials<T: Scalar>(cfg: &TrialConfig<T>) -> Result<Vec<TrialTrace<T>>> {
    cfg.validate()?;
    (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| run_single_trial(cfg, cfg.seed0 + t as u64))
        .collect()
}

/// Per-iteration five-point summary across trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileRow<T> {
    pub iteration: usize,
    pub min: T,
    pub q25: T,
    pub median: T,
    pub q75: T,
    pub max: T,
}

/// Summarize traces into per-iteration quantiles. Shorter traces are padded
/// by carrying their final value forward; quantiles interpolate linearly
/// between order statistics.
pub fn summarize<T: Scalar>(traces: &[TrialTrace<T>]) -> Result<Vec<QuantileRow<T>>> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no traces to summarize"));
    }
    let len = traces.iter().map(|t| t.costs.len()).max().unwrap();
    let mut rows = Vec::with_capacity(len);
    let mut values = Vec::with_capacity(traces.len());
    for i in 0..len {
        values.clear();
        for t in traces {
            let v = t.costs.get(i).copied().unwrap_or_else(|| t.final_cost());
            values.push(v);
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite cost"));
        rows.push(QuantileRow {
            iteration: i,
            min: values[0],
            q25: quantile_sorted(&values, 0.25),
            median: quantile_sorted(&values, 0.5),
            q75: quantile_sorted(&values, 0.75),
            max: values[values.len() - 1],
        });
    }
    Ok(rows)
}

/// Linear-interpolation quantile of pre-sorted values.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    debug_assert!(!sorted.is_empty());
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = T::from_f64(h - lo as f64);
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}
