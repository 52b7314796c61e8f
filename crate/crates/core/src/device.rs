//! Multi-plane light conversion (MPLC) converter model.
//!
//! The device alternates `m` fixed N-port unitaries with arrays of N
//! single-mode phase shifters; coherent detection appends one more phase
//! shifter array after the final layer. Each layer's phase array feeds its
//! fixed unitary, so the realized transform is
//!
//! ```text
//! X(p) = [D_out] · A_m · D_m · … · A_1 · D_1
//! ```
//!
//! with `D_i = diag(e^{i·phase})`. Every phase array is separated from the
//! next by a mixing unitary; this is what keeps all N·(m+1) (coherent) or
//! N·m (intensity) parameters effective and the redundant architecture's
//! optimization landscape trap-free. Parameters are laid out layer-major,
//! port-minor, with the appended output array (coherent only) in the last
//! N slots. Fixing every phase but one makes each matrix entry affine in
//! `e^{iφ}`, which is what the gradient-measurement scheme builds on.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::PhaseResponse;
use crate::error::{Error, Result};
use crate::linalg::{haar_unitary, matmul, ComplexMatrix, RngSeed};
use crate::metrics::{cost, CostKind, Metric};
use crate::scalar::Scalar;

/// Output measurement mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detection {
    /// Complex amplitudes are observable; an extra output phase array exists.
    Coherent,
    /// Only magnitudes are observable; no output phase array.
    Intensity,
}

/// Ordered real phase-shift (drive) vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<T>(pub Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// Copy with entry `k` replaced by `value`.
    pub fn with_value(&self, k: usize, value: T) -> Self {
        let mut p = self.clone();
        p.0[k] = value;
        p
    }

    /// Copy with entry `k` shifted by `delta`.
    pub fn with_offset(&self, k: usize, delta: T) -> Self {
        let mut p = self.clone();
        p.0[k] += delta;
        p
    }
}

/// Immutable MPLC converter description.
#[derive(Debug, Clone)]
pub struct MplcDevice<T> {
    n_ports: usize,
    layers: Vec<ComplexMatrix<T>>,
    detection: Detection,
    response: PhaseResponse<T>,
}

impl<T: Scalar> MplcDevice<T> {
    /// Build from explicit fixed layer unitaries. Every layer must be square
    /// of the same order and unitary to within the scalar type's tolerance.
    pub fn new(layers: Vec<ComplexMatrix<T>>, detection: Detection) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("device needs at least one layer"));
        }
        let n = layers[0].rows();
        for (i, a) in layers.iter().enumerate() {
            if a.rows() != n || a.cols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} is {}x{}, expected {n}x{n}",
                    a.rows(),
                    a.cols()
                )));
            }
            if !a.is_unitary_within(T::unitarity_tolerance()) {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} is not unitary (error {})",
                    a.unitarity_error()
                )));
            }
        }
        Ok(Self {
            n_ports: n,
            layers,
            detection,
            response: PhaseResponse::Ideal,
        })
    }

    /// Sample a device with Haar-random fixed layers.
    pub fn sample<R: Rng + ?Sized>(
        n_ports: usize,
        n_layers: usize,
        detection: Detection,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|_| haar_unitary(n_ports, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, detection)
    }

    /// Replace the drive-to-phase response (ideal by default).
    pub fn with_response(mut self, response: PhaseResponse<T>) -> Self {
        self.response = response;
        self
    }

    pub fn n_ports(&self) -> usize {
        self.n_ports
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn detection(&self) -> Detection {
        self.detection
    }

    pub fn layers(&self) -> &[ComplexMatrix<T>] {
        &self.layers
    }

    pub fn response(&self) -> &PhaseResponse<T> {
        &self.response
    }

    /// Number of phase-shift parameters: N·(m+1) for coherent detection,
    /// N·m for intensity detection.
    pub fn param_count(&self) -> usize {
        match self.detection {
            Detection::Coherent => self.n_ports * (self.layers.len() + 1),
            Detection::Intensity => self.n_ports * self.layers.len(),
        }
    }

    /// Number of diagonal phase arrays (m, plus one for coherent detection).
    fn array_count(&self) -> usize {
        self.param_count() / self.n_ports
    }

    /// Uniform [0, 2π) initial parameters drawn from `rng`.
    pub fn sample_initial_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector<T> {
        let two_pi = T::PI() + T::PI();
        ParamVector(
            (0..self.param_count())
                .map(|_| T::sample_uniform_01(rng) * two_pi)
                .collect(),
        )
    }

    fn check_params(&self, p: &ParamVector<T>) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has length {}, device expects {}",
                p.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    /// Drive values mapped through the phase response, per shifter.
    pub fn actual_phases(&self, p: &ParamVector<T>) -> Result<Vec<T>> {
        self.check_params(p)?;
        Ok(match &self.response {
            PhaseResponse::Ideal => p.0.clone(),
            r => p.0.iter().map(|&v| r.apply(v)).collect(),
        })
    }

    fn phase_factors(&self, phases: &[T], array: usize) -> Vec<Complex<T>> {
        let n = self.n_ports;
        phases[array * n..(array + 1) * n]
            .iter()
            .map(|&phi| Complex::from_polar(T::one(), phi))
            .collect()
    }

    /// The realized unitary X(p).
    pub fn forward(&self, p: &ParamVector<T>) -> Result<ComplexMatrix<T>> {
        let phases = self.actual_phases(p)?;
        // A_1·D_1, then A_i·D_i stacked on top, then the output array.
        let mut x = self.layers[0].clone();
        x.scale_cols(&self.phase_factors(&phases, 0));
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            x.scale_rows(&self.phase_factors(&phases, i));
            x = matmul(layer, &x)?;
        }
        if self.detection == Detection::Coherent {
            x.scale_rows(&self.phase_factors(&phases, self.layers.len()));
        }
        Ok(x)
    }

    /// Partial chain products around phase array `array`:
    /// `X = post · D_array · pre`. For the output array (coherent only)
    /// `post` is the identity; for array `a` in the stack, `pre` ends at
    /// layer a's input and `post` starts with layer a's fixed unitary.
    fn chain_around(&self, phases: &[T], array: usize) -> Result<(ComplexMatrix<T>, ComplexMatrix<T>)> {
        let m = self.layers.len();
        // pre: everything applied before the phase array.
        let mut pre = ComplexMatrix::identity(self.n_ports);
        for i in 0..array.min(m) {
            pre.scale_rows(&self.phase_factors(phases, i));
            pre = matmul(&self.layers[i], &pre)?;
        }

        // post: everything applied after the phase array, built from the
        // output side inward.
        let mut post = ComplexMatrix::identity(self.n_ports);
        if array < m {
            if self.detection == Detection::Coherent {
                post.scale_cols(&self.phase_factors(phases, m));
            }
            for i in ((array + 1)..m).rev() {
                post = matmul(&post, &self.layers[i])?;
                post.scale_cols(&self.phase_factors(phases, i));
            }
            post = matmul(&post, &self.layers[array])?;
        }
        Ok((pre, post))
    }

    /// Affine decomposition of X with respect to parameter `k`:
    /// `X(φ) = a_mat·e^{iφ} + b_mat` where φ replaces the (post-response)
    /// phase of shifter `k` and all other phases stay fixed.
    pub fn single_phase_decomposition(
        &self,
        p: &ParamVector<T>,
        k: usize,
    ) -> Result<AffineDecomposition<T>> {
        let phases = self.actual_phases(p)?;
        if k >= self.param_count() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.param_count(),
            });
        }
        let n = self.n_ports;
        let (array, port) = (k / n, k % n);
        let (pre, post) = self.chain_around(&phases, array)?;
        let a_mat = ComplexMatrix::outer(&post.col(port), pre.row(port));
        let x = self.forward(p)?;
        let e_k = Complex::from_polar(T::one(), phases[k]);
        let b_mat = ComplexMatrix::from_fn(n, n, |i, j| x[(i, j)] - a_mat[(i, j)] * e_k);
        Ok(AffineDecomposition {
            a_mat,
            b_mat,
            param_index: k,
        })
    }

    /// Exact gradient of the chosen cost with respect to the (post-response)
    /// phases, up to floating-point rounding. Supports the squared Frobenius
    /// error and the intensity distance; the magnitude distance has no
    /// sinusoidal structure and is not differentiated here.
    pub fn analytic_gradient(
        &self,
        p: &ParamVector<T>,
        target: &ComplexMatrix<T>,
        kind: CostKind,
    ) -> Result<Vec<T>> {
        let phases = self.actual_phases(p)?;
        if target.rows() != self.n_ports || target.cols() != self.n_ports {
            return Err(Error::DimensionMismatch(format!(
                "target is {}x{}, device has {} ports",
                target.rows(),
                target.cols(),
                self.n_ports
            )));
        }
        let n = self.n_ports;
        let m = self.layers.len();
        let arrays = self.array_count();
        let x = self.forward(p)?;

        // pres[a] = chain strictly below phase array a; posts[a] = chain
        // strictly above it, so X = posts[a] · D_a · pres[a].
        let mut pres: Vec<ComplexMatrix<T>> = Vec::with_capacity(arrays);
        let mut cum = ComplexMatrix::identity(n);
        pres.push(cum.clone());
        for a in 1..arrays {
            cum.scale_rows(&self.phase_factors(&phases, a - 1));
            cum = matmul(&self.layers[a - 1], &cum)?;
            pres.push(cum.clone());
        }

        let mut posts: Vec<ComplexMatrix<T>> = vec![ComplexMatrix::identity(n); arrays];
        let mut cum = ComplexMatrix::identity(n);
        if self.detection == Detection::Coherent {
            // posts[m] (output array) stays the identity.
            cum.scale_cols(&self.phase_factors(&phases, m));
        }
        cum = matmul(&cum, &self.layers[m - 1])?;
        posts[m - 1] = cum.clone();
        for a in (0..m.saturating_sub(1)).rev() {
            cum.scale_cols(&self.phase_factors(&phases, a + 1));
            cum = matmul(&cum, &self.layers[a])?;
            posts[a] = cum.clone();
        }

        let mut grad = vec![T::zero(); self.param_count()];
        let two = T::from_f64(2.0);
        let four = T::from_f64(4.0);
        match kind.metric {
            Metric::FrobeniusSq => {
                let c = target.sub(&x)?.conj();
                for a in 0..arrays {
                    let w = matmul(&matmul(&posts[a].transpose(), &c)?, &pres[a].transpose())?;
                    for j in 0..n {
                        let k = a * n + j;
                        let z = w[(j, j)] * Complex::from_polar(T::one(), phases[k]);
                        grad[k] = two * z.im;
                    }
                }
            }
            Metric::IntensityDistance => {
                let u_dag = target.dagger();
                let mm = matmul(&x, &u_dag)?;
                let diag_conj: Vec<Complex<T>> = (0..n).map(|i| mm[(i, i)].conj()).collect();
                for a in 0..arrays {
                    let mut left = matmul(&pres[a], &u_dag)?;
                    left.scale_cols(&diag_conj);
                    let w = matmul(&left, &posts[a])?;
                    for j in 0..n {
                        let k = a * n + j;
                        let z = w[(j, j)] * Complex::from_polar(T::one(), phases[k]);
                        grad[k] = four * z.im;
                    }
                }
            }
            Metric::MagnitudeDistance => {
                return Err(Error::InvalidConfig(
                    "the magnitude distance has no analytic gradient here; use the \
                     intensity distance or the squared Frobenius error"
                        .into(),
                ))
            }
        }
        if kind.normalized {
            let div = kind.divisor::<T>(n);
            for g in &mut grad {
                *g /= div;
            }
        }
        Ok(grad)
    }
}

/// `X(φ) = a_mat·e^{iφ} + b_mat` for one swept phase.
#[derive(Debug, Clone)]
pub struct AffineDecomposition<T> {
    pub a_mat: ComplexMatrix<T>,
    pub b_mat: ComplexMatrix<T>,
    pub param_index: usize,
}

impl<T: Scalar> AffineDecomposition<T> {
    /// Evaluate the decomposition at phase `phi`.
    pub fn reconstruct(&self, phi: T) -> ComplexMatrix<T> {
        let e = Complex::from_polar(T::one(), phi);
        ComplexMatrix::from_fn(self.a_mat.rows(), self.a_mat.cols(), |i, j| {
            self.a_mat[(i, j)] * e + self.b_mat[(i, j)]
        })
    }
}

/// Sweep the drive of shifter `k` over `points` equispaced values in
/// [0, 2π) and evaluate the cost against `target` at each.
pub fn sweep_cost<T: Scalar>(
    device: &MplcDevice<T>,
    target: &ComplexMatrix<T>,
    p: &ParamVector<T>,
    k: usize,
    points: usize,
    kind: CostKind,
) -> Result<Vec<(T, T)>> {
    let two_pi = T::PI() + T::PI();
    let step = two_pi / T::from_f64(points as f64);
    (0..points)
        .map(|s| {
            let phi = step * T::from_f64(s as f64);
            let x = device.forward(&p.with_value(k, phi))?;
            Ok((phi, cost(target, &x, kind)?))
        })
        .collect()
}

/// Serializable device description so experiments can pin exact devices.
/// Layers come either from a seed (Haar-sampled in order) or as explicit
/// row-major matrices of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub n_ports: usize,
    pub n_layers: usize,
    pub detection: Detection,
    pub layers: LayerSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSource {
    Seed(u64),
    Explicit(Vec<Vec<Vec<[f64; 2]>>>),
}

impl DeviceSpec {
    pub fn build<T: Scalar>(&self) -> Result<MplcDevice<T>> {
        match &self.layers {
            LayerSource::Seed(seed) => {
                let mut rng = RngSeed(*seed).stream();
                MplcDevice::sample(self.n_ports, self.n_layers, self.detection, &mut rng)
            }
            LayerSource::Explicit(layers) => {
                if layers.len() != self.n_layers {
                    return Err(Error::DimensionMismatch(format!(
                        "{} explicit layers, header says {}",
                        layers.len(),
                        self.n_layers
                    )));
                }
                let mats = layers
                    .iter()
                    .map(|rows| {
                        if rows.len() != self.n_ports
                            || rows.iter().any(|r| r.len() != self.n_ports)
                        {
                            return Err(Error::DimensionMismatch(
                                "explicit layer shape does not match port count".into(),
                            ));
                        }
                        Ok(ComplexMatrix::from_fn(self.n_ports, self.n_ports, |i, j| {
                            Complex::new(T::from_f64(rows[i][j][0]), T::from_f64(rows[i][j][1]))
                        }))
                    })
                    .collect::<Result<Vec<_>>>()?;
                MplcDevice::new(mats, self.detection)
            }
        }
    }

    /// Capture an existing f64 device as an explicit spec.
    pub fn from_device(device: &MplcDevice<f64>) -> Self {
        let layers = device
            .layers()
            .iter()
            .map(|m| {
                (0..m.rows())
                    .map(|i| m.row(i).iter().map(|z| [z.re, z.im]).collect())
                    .collect()
            })
            .collect();
        Self {
            n_ports: device.n_ports(),
            n_layers: device.n_layers(),
            detection: device.detection(),
            layers: LayerSource::Explicit(layers),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fit_sinusoid;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sample_device(n: usize, m: usize, detection: Detection, seed: u64) -> MplcDevice<f64> {
        MplcDevice::sample(n, m, detection, &mut RngSeed(seed).stream()).unwrap()
    }

    fn random_params(device: &MplcDevice<f64>, seed: u64) -> ParamVector<f64> {
        device.sample_initial_params(&mut RngSeed(seed).stream())
    }

    fn haar64(n: usize, seed: u64) -> ComplexMatrix<f64> {
        haar_unitary(n, &mut RngSeed(seed).stream()).unwrap()
    }

    #[test]
    fn forward_identity_device_is_identity() {
        let layers = vec![ComplexMatrix::<f64>::identity(4); 3];
        let device = MplcDevice::new(layers, Detection::Intensity).unwrap();
        let p = ParamVector::zeros(device.param_count());
        let x = device.forward(&p).unwrap();
        assert!(x.max_abs_diff(&ComplexMatrix::identity(4)).unwrap() < 1e-15);
    }

    #[test]
    fn forward_single_layer_identity_gives_phase_diagonal() {
        let device =
            MplcDevice::new(vec![ComplexMatrix::<f64>::identity(4)], Detection::Intensity).unwrap();
        let p = ParamVector(vec![0.3, 1.1, -0.4, 2.2]);
        let x = device.forward(&p).unwrap();
        let expect = ComplexMatrix::diag_unit_phases(&[0.3, 1.1, -0.4, 2.2]);
        assert!(x.max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn forward_output_is_unitary() {
        let device = sample_device(4, 5, Detection::Coherent, 1);
        let p = random_params(&device, 2);
        let x = device.forward(&p).unwrap();
        assert!(x.unitarity_error() <= 1e-11);
    }

    #[test]
    fn forward_rejects_wrong_parameter_length() {
        let device = sample_device(4, 5, Detection::Coherent, 3);
        let p = ParamVector::zeros(device.param_count() - 1);
        assert!(device.forward(&p).is_err());
    }

    #[test]
    fn param_counts_by_detection() {
        assert_eq!(sample_device(8, 9, Detection::Coherent, 4).param_count(), 80);
        assert_eq!(sample_device(8, 9, Detection::Intensity, 4).param_count(), 72);
    }

    #[test]
    fn decomposition_trivial_single_layer() {
        let device =
            MplcDevice::new(vec![ComplexMatrix::<f64>::identity(3)], Detection::Intensity).unwrap();
        let p = ParamVector::zeros(3);
        let d = device.single_phase_decomposition(&p, 1).unwrap();
        // a = E_11, b = I − E_11.
        for i in 0..3 {
            for j in 0..3 {
                let a_expect = if (i, j) == (1, 1) { 1.0 } else { 0.0 };
                let b_expect = if i == j && i != 1 { 1.0 } else { 0.0 };
                assert!((d.a_mat[(i, j)].re - a_expect).abs() < 1e-15);
                assert!(d.a_mat[(i, j)].im.abs() < 1e-15);
                assert!((d.b_mat[(i, j)].re - b_expect).abs() < 1e-15);
                assert!(d.b_mat[(i, j)].im.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn decomposition_reconstructs_forward() {
        let device = sample_device(4, 5, Detection::Coherent, 5);
        let p = random_params(&device, 6);
        for k in [0usize, 7, 13, device.param_count() - 1] {
            let d = device.single_phase_decomposition(&p, k).unwrap();
            for phi in [0.0, 1.3, PI, 5.0] {
                let direct = device.forward(&p.with_value(k, phi)).unwrap();
                let rebuilt = d.reconstruct(phi);
                assert!(
                    direct.max_abs_diff(&rebuilt).unwrap() < 1e-12,
                    "k={k}, phi={phi}"
                );
            }
        }
    }

    #[test]
    fn decomposition_a_is_rank_one() {
        let device = sample_device(8, 9, Detection::Coherent, 7);
        let p = random_params(&device, 8);
        let d = device.single_phase_decomposition(&p, 37).unwrap();
        let a = &d.a_mat;
        for i in 0..8 {
            for j in (i + 1)..8 {
                for k in 0..8 {
                    for l in (k + 1)..8 {
                        let minor = a[(i, k)] * a[(j, l)] - a[(i, l)] * a[(j, k)];
                        assert!(minor.norm() < 1e-10, "2x2 minor not zero");
                    }
                }
            }
        }
    }

    #[test]
    fn decomposition_sum_is_unitary_at_zero_phase() {
        let device = sample_device(4, 5, Detection::Intensity, 9);
        let p = random_params(&device, 10);
        let d = device.single_phase_decomposition(&p, 11).unwrap();
        let at_zero = d.reconstruct(0.0);
        assert!(at_zero.unitarity_error() <= 1e-11);
    }

    #[test]
    fn decomposition_rejects_out_of_range_index() {
        let device = sample_device(4, 5, Detection::Intensity, 11);
        let p = ParamVector::zeros(device.param_count());
        assert!(device
            .single_phase_decomposition(&p, device.param_count())
            .is_err());
    }

    #[test]
    fn analytic_gradient_vanishes_at_perfect_fit() {
        let device = sample_device(8, 9, Detection::Coherent, 12);
        let p = random_params(&device, 13);
        let target = device.forward(&p).unwrap();
        let g = device
            .analytic_gradient(&p, &target, CostKind::raw(Metric::FrobeniusSq))
            .unwrap();
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-10, "gradient norm {norm} at a perfect fit");
    }

    #[test]
    fn analytic_gradient_matches_sinc_corrected_central_difference() {
        // With a sinusoidal single-phase dependence, the central difference
        // divided by sinc(δ) is exact even at the large step δ = 0.7.
        let delta: f64 = 0.7;
        let sinc = delta.sin() / delta;
        for (detection, metric) in [
            (Detection::Coherent, Metric::FrobeniusSq),
            (Detection::Intensity, Metric::IntensityDistance),
        ] {
            let device = sample_device(8, 9, detection, 14);
            let p = random_params(&device, 15);
            let target = haar64(8, 16);
            let kind = CostKind::normalized(metric);
            let grad = device.analytic_gradient(&p, &target, kind).unwrap();
            for k in (0..device.param_count()).step_by(7) {
                let plus = cost(&target, &device.forward(&p.with_offset(k, delta)).unwrap(), kind)
                    .unwrap();
                let minus = cost(
                    &target,
                    &device.forward(&p.with_offset(k, -delta)).unwrap(),
                    kind,
                )
                .unwrap();
                let fd = (plus - minus) / (2.0 * delta * sinc);
                assert!(
                    (fd - grad[k]).abs() < 1e-9,
                    "{detection:?}/{metric:?} k={k}: fd={fd}, analytic={}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_small_step_central_difference() {
        // Classical O(δ²) check, independent of the sinusoid structure.
        let delta = 1e-6;
        for (detection, metric) in [
            (Detection::Coherent, Metric::FrobeniusSq),
            (Detection::Intensity, Metric::IntensityDistance),
        ] {
            let device = sample_device(4, 5, detection, 17);
            let p = random_params(&device, 18);
            let target = haar64(4, 19);
            let kind = CostKind::raw(metric);
            let grad = device.analytic_gradient(&p, &target, kind).unwrap();
            for (k, &g) in grad.iter().enumerate() {
                let plus = cost(&target, &device.forward(&p.with_offset(k, delta)).unwrap(), kind)
                    .unwrap();
                let minus = cost(
                    &target,
                    &device.forward(&p.with_offset(k, -delta)).unwrap(),
                    kind,
                )
                .unwrap();
                let fd = (plus - minus) / (2.0 * delta);
                assert!((fd - g).abs() < 1e-5, "{detection:?} k={k}: fd={fd}, analytic={g}");
            }
        }
    }

    #[test]
    fn analytic_gradient_rejects_magnitude_distance() {
        let device = sample_device(4, 5, Detection::Intensity, 20);
        let p = ParamVector::zeros(device.param_count());
        let target = haar64(4, 21);
        assert!(device
            .analytic_gradient(&p, &target, CostKind::raw(Metric::MagnitudeDistance))
            .is_err());
    }

    #[test]
    fn single_phase_sweeps_are_sinusoidal() {
        for (detection, metric) in [
            (Detection::Coherent, Metric::FrobeniusSq),
            (Detection::Intensity, Metric::IntensityDistance),
        ] {
            let device = sample_device(8, 9, detection, 22);
            let p = random_params(&device, 23);
            let target = haar64(8, 24);
            for k in [0usize, device.param_count() / 2, device.param_count() - 1] {
                let samples = sweep_cost(
                    &device,
                    &target,
                    &p,
                    k,
                    32,
                    CostKind::normalized(metric),
                )
                .unwrap();
                let (_, residual) = fit_sinusoid(&samples).unwrap();
                assert!(
                    residual <= 1e-10,
                    "{detection:?}/{metric:?} k={k}: residual {residual:e}"
                );
            }
        }
    }

    #[test]
    fn magnitude_distance_sweep_is_not_sinusoidal() {
        let device = sample_device(8, 9, Detection::Intensity, 25);
        let p = random_params(&device, 26);
        let target = haar64(8, 27);
        let samples = sweep_cost(
            &device,
            &target,
            &p,
            5,
            32,
            CostKind::normalized(Metric::MagnitudeDistance),
        )
        .unwrap();
        let (_, residual) = fit_sinusoid(&samples).unwrap();
        assert!(residual > 1e-3, "magnitude distance fit residual {residual:e}");
    }

    #[test]
    fn per_entry_intensities_are_sinusoidal() {
        let device = sample_device(4, 5, Detection::Intensity, 28);
        let p = random_params(&device, 29);
        let target = haar64(4, 30);
        let u_dag = target.dagger();
        let k = 9;
        for i in 0..4 {
            for j in 0..4 {
                let samples: Vec<(f64, f64)> = (0..32)
                    .map(|s| {
                        let phi = 2.0 * PI * s as f64 / 32.0;
                        let x = device.forward(&p.with_value(k, phi)).unwrap();
                        let m = matmul(&x, &u_dag).unwrap();
                        (phi, m[(i, j)].norm_sqr())
                    })
                    .collect();
                let (_, residual) = fit_sinusoid(&samples).unwrap();
                assert!(residual <= 1e-10, "entry ({i},{j}) residual {residual:e}");
            }
        }
    }

    #[test]
    fn forward_is_2pi_periodic() {
        let device = sample_device(4, 5, Detection::Coherent, 31);
        let p = random_params(&device, 32);
        let x0 = device.forward(&p).unwrap();
        for k in [0usize, 5, device.param_count() - 1] {
            let x1 = device.forward(&p.with_offset(k, 2.0 * PI)).unwrap();
            assert!(x0.max_abs_diff(&x1).unwrap() < 1e-12);
        }
    }

    #[test]
    fn output_phase_freedom_moves_frobenius_but_not_intensity() {
        let device = sample_device(8, 9, Detection::Coherent, 33);
        let p = random_params(&device, 34);
        let x = device.forward(&p).unwrap();
        let target = haar64(8, 35);
        let mut rng = RngSeed(36).stream();
        let thetas: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        let shifted = {
            let d = ComplexMatrix::diag_unit_phases(&thetas);
            matmul(&d, &target).unwrap()
        };
        let f0 = cost(&target, &x, CostKind::raw(Metric::FrobeniusSq)).unwrap();
        let f1 = cost(&shifted, &x, CostKind::raw(Metric::FrobeniusSq)).unwrap();
        assert!((f0 - f1).abs() > 1e-3, "frobenius cost should move");
        let v0 = cost(&target, &x, CostKind::raw(Metric::IntensityDistance)).unwrap();
        let v1 = cost(&shifted, &x, CostKind::raw(Metric::IntensityDistance)).unwrap();
        assert!((v0 - v1).abs() < 1e-12, "intensity distance should not move");
    }

    #[test]
    fn device_spec_seed_round_trip_is_deterministic() {
        let spec = DeviceSpec {
            n_ports: 4,
            n_layers: 5,
            detection: Detection::Coherent,
            layers: LayerSource::Seed(99),
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: DeviceSpec = serde_json::from_str(&json).unwrap();
        let a: MplcDevice<f64> = spec.build().unwrap();
        let b: MplcDevice<f64> = back.build().unwrap();
        for (x, y) in a.layers().iter().zip(b.layers()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn device_spec_explicit_round_trip() {
        let device = sample_device(3, 2, Detection::Intensity, 44);
        let spec = DeviceSpec::from_device(&device);
        let json = serde_json::to_string(&spec).unwrap();
        let back: DeviceSpec = serde_json::from_str(&json).unwrap();
        let rebuilt: MplcDevice<f64> = back.build().unwrap();
        for (x, y) in device.layers().iter().zip(rebuilt.layers()) {
            assert!(x.max_abs_diff(y).unwrap() == 0.0);
        }
    }

    #[test]
    fn rejects_non_unitary_layers() {
        let mut bad = ComplexMatrix::<f64>::identity(3);
        bad[(0, 0)] = Complex::new(1.5, 0.0);
        assert!(MplcDevice::new(vec![bad], Detection::Intensity).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn decomposition_invariant_holds(
            seed in 0u64..1000,
            n in 2usize..6,
            m in 1usize..5,
            coherent in proptest::bool::ANY,
            k_frac in 0.0f64..1.0,
            phi in 0.0f64..(2.0 * PI),
        ) {
            let detection = if coherent { Detection::Coherent } else { Detection::Intensity };
            let device = sample_device(n, m, detection, seed);
            let p = random_params(&device, seed.wrapping_add(1));
            let k = ((device.param_count() as f64 - 1.0) * k_frac).round() as usize;
            let d = device.single_phase_decomposition(&p, k).unwrap();
            let direct = device.forward(&p.with_value(k, phi)).unwrap();
            let rebuilt = d.reconstruct(phi);
            prop_assert!(direct.max_abs_diff(&rebuilt).unwrap() < 1e-12);
        }
    }
}
