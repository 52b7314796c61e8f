//! Cost functions between unitary matrices and related identities.
//!
//! Three costs are supported:
//! - squared Frobenius error `Σ|U_kl − X_kl|²` (coherent detection),
//! - the magnitude distance `Σ_ij (δ_ij − |[XU†]_ij|)²`, phase-insensitive
//!   but not sinusoidal under single-phase sweeps,
//! - the intensity distance `Σ_ij |δ_ij − |[XU†]_ij|²|`, phase-insensitive
//!   *and* exactly sinusoidal under single-phase sweeps, which is what makes
//!   sinc-corrected central differences exact for it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, ComplexMatrix};
use crate::scalar::Scalar;

/// Which distance is being measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `Σ|U − X|²`, requires coherent detection.
    FrobeniusSq,
    /// `Σ (δ − |[XU†]|)²`, phase-insensitive (magnitude form).
    MagnitudeDistance,
    /// `Σ |δ − |[XU†]|²|`, phase-insensitive (intensity form).
    IntensityDistance,
}

/// A metric plus its normalization flag. Normalized costs lie in [0, 1]:
/// the Frobenius error is divided by 4N, both phase-insensitive distances
/// by 2N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostKind {
    pub metric: Metric,
    pub normalized: bool,
}

impl CostKind {
    pub fn normalized(metric: Metric) -> Self {
        Self { metric, normalized: true }
    }

    pub fn raw(metric: Metric) -> Self {
        Self { metric, normalized: false }
    }

    /// Normalization divisor for matrices of order `n`.
    pub fn divisor<T: Scalar>(&self, n: usize) -> T {
        let n = T::from_f64(n as f64);
        match self.metric {
            Metric::FrobeniusSq => T::from_f64(4.0) * n,
            Metric::MagnitudeDistance | Metric::IntensityDistance => T::from_f64(2.0) * n,
        }
    }
}

fn check_pair<T: Scalar>(u: &ComplexMatrix<T>, x: &ComplexMatrix<T>) -> Result<usize> {
    if !u.is_square() || !x.is_square() || u.rows() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            u.rows(),
            u.cols(),
            x.rows(),
            x.cols()
        )));
    }
    Ok(u.rows())
}

/// Squared Frobenius error `Σ_kl |U_kl − X_kl|²`; in [0, 4N] for unitary inputs.
pub fn frobenius_cost<T: Scalar>(u: &ComplexMatrix<T>, x: &ComplexMatrix<T>) -> Result<T> {
    check_pair(u, x)?;
    Ok(u.sub(x)?.frobenius_sq())
}

/// Magnitude-form phase-insensitive distance `Σ_ij (δ_ij − |[XU†]_ij|)²`.
pub fn magnitude_distance<T: Scalar>(u: &ComplexMatrix<T>, x: &ComplexMatrix<T>) -> Result<T> {
    let n = check_pair(u, x)?;
    let m = matmul(x, &u.dagger())?;
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            let s = m[(i, j)].norm();
            let delta = if i == j { T::one() } else { T::zero() };
            let term = delta - s;
            acc += term * term;
        }
    }
    Ok(acc)
}

/// Intensity-form phase-insensitive distance `Σ_ij |δ_ij − |[XU†]_ij|²|`;
/// in [0, 2N] for unitary inputs.
pub fn intensity_distance<T: Scalar>(u: &ComplexMatrix<T>, x: &ComplexMatrix<T>) -> Result<T> {
    let n = check_pair(u, x)?;
    let m = matmul(x, &u.dagger())?;
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            let s2 = m[(i, j)].norm_sqr();
            let delta = if i == j { T::one() } else { T::zero() };
            acc += (delta - s2).abs();
        }
    }
    Ok(acc)
}

/// Evaluate the chosen cost, normalized into [0, 1] when requested.
pub fn cost<T: Scalar>(
    u: &ComplexMatrix<T>,
    x: &ComplexMatrix<T>,
    kind: CostKind,
) -> Result<T> {
    let n = check_pair(u, x)?;
    let raw = match kind.metric {
        Metric::FrobeniusSq => frobenius_cost(u, x)?,
        Metric::MagnitudeDistance => magnitude_distance(u, x)?,
        Metric::IntensityDistance => intensity_distance(u, x)?,
    };
    if kind.normalized {
        Ok(raw / kind.divisor::<T>(n))
    } else {
        Ok(raw)
    }
}

/// Normalized cost in [0, 1] for the given metric.
pub fn normalized_cost<T: Scalar>(
    u: &ComplexMatrix<T>,
    x: &ComplexMatrix<T>,
    metric: Metric,
) -> Result<T> {
    cost(u, x, CostKind::normalized(metric))
}

/// Least-squares fit of `g(φ) = A·sin(φ + α) + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit<T> {
    /// Amplitude A ≥ 0.
    pub amplitude: T,
    /// Phase α in [−π, π).
    pub phase: T,
    /// Offset B.
    pub offset: T,
}

impl<T: Scalar> SinusoidFit<T> {
    pub fn predict(&self, phi: T) -> T {
        self.amplitude * (phi + self.phase).sin() + self.offset
    }
}

/// Fit `A·sin(φ+α) + B` to samples `(φ, g)` by linear least squares on the
/// basis `(sin φ, cos φ, 1)`, which is exact for the model class. Returns
/// the fit and the max-norm residual over the samples.
///
/// Rejects fewer than 3 samples distinct mod 2π, and sample sets where all
/// φ coincide mod π (the design matrix loses rank).
pub fn fit_sinusoid<T: Scalar>(samples: &[(T, T)]) -> Result<(SinusoidFit<T>, T)> {
    let two_pi = T::PI() + T::PI();
    let mut reduced: Vec<T> = samples
        .iter()
        .map(|&(phi, _)| {
            let mut r = phi % two_pi;
            if r < T::zero() {
                r += two_pi;
            }
            r
        })
        .collect();
    reduced.sort_by(|a, b| a.partial_cmp(b).expect("finite phase"));
    let tol = T::from_f64(1e-9);
    let mut distinct = 0usize;
    let mut last: Option<T> = None;
    for &r in &reduced {
        if last.is_none_or(|prev| r - prev > tol) {
            distinct += 1;
        }
        last = Some(r);
    }
    // The first and last reduced phases may alias across the 2π wrap.
    if distinct >= 2 {
        let first = reduced[0];
        let end = *reduced.last().unwrap();
        if two_pi - end + first <= tol {
            distinct -= 1;
        }
    }
    // All phases equal mod π makes sin φ and cos φ collinear over the
    // samples no matter how many there are.
    let first_mod_pi = reduced[0] % T::PI();
    let all_equal_mod_pi = reduced.iter().all(|&r| {
        let d = ((r % T::PI()) - first_mod_pi).abs();
        d <= tol || (T::PI() - d).abs() <= tol
    });
    if all_equal_mod_pi {
        return Err(Error::RankDeficient(
            "all sample phases coincide mod π; the sine and cosine columns are collinear".into(),
        ));
    }
    if distinct < 3 {
        return Err(Error::InsufficientSamples(format!(
            "sinusoid fit needs at least 3 samples distinct mod 2π, got {distinct}"
        )));
    }

    // Normal equations for the basis (sin φ, cos φ, 1).
    let mut ata = [[T::zero(); 3]; 3];
    let mut atb = [T::zero(); 3];
    for &(phi, g) in samples {
        let row = [phi.sin(), phi.cos(), T::one()];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * g;
        }
    }
    let coeffs = solve3(ata, atb)?;
    let (c_sin, c_cos, offset) = (coeffs[0], coeffs[1], coeffs[2]);

    let amplitude = c_sin.hypot(c_cos);
    let mut phase = if amplitude > T::zero() {
        c_cos.atan2(c_sin)
    } else {
        T::zero()
    };
    if phase >= T::PI() {
        phase -= two_pi;
    }
    let fit = SinusoidFit { amplitude, phase, offset };
    let residual = samples
        .iter()
        .map(|&(phi, g)| (fit.predict(phi) - g).abs())
        .fold(T::zero(), T::max);
    Ok((fit, residual))
}

/// Gaussian elimination with partial pivoting for the 3×3 normal equations.
#[allow(clippy::needless_range_loop)]
fn solve3<T: Scalar>(mut a: [[T; 3]; 3], mut b: [T; 3]) -> Result<[T; 3]> {
    let scale = a
        .iter()
        .flatten()
        .fold(T::zero(), |acc, &v| acc.max(v.abs()));
    let tol = scale.max(T::one()) * T::epsilon() * T::from_f64(100.0);
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&i, &j| {
                a[i][col]
                    .abs()
                    .partial_cmp(&a[j][col].abs())
                    .expect("finite pivot")
            })
            .unwrap();
        if a[pivot_row][col].abs() <= tol {
            return Err(Error::RankDeficient(
                "sinusoid design matrix is singular (all phases equal mod π?)".into(),
            ));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let bv = b[col];
            b[row] -= f * bv;
        }
    }
    let mut x = [T::zero(); 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in (row + 1)..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Test whether a vector of magnitudes is realizable as the diagonal of some
/// unitary matrix: every entry must lie in [0, 1] and
/// `Σ η_i − 2 η_l ≤ n − 2` must hold for every l. Each inequality is checked
/// with a small floating-point tolerance.
pub fn horn_polyhedron_contains<T: Scalar>(eta: &[T]) -> Result<bool> {
    let n = eta.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "diagonal-magnitude test needs length at least 2".into(),
        ));
    }
    let tol = T::from_f64(1e-12).max(T::epsilon() * T::from_f64(100.0));
    let mut sum = T::zero();
    for &e in eta {
        if e < -tol || e > T::one() + tol {
            return Ok(false);
        }
        sum += e;
    }
    let bound = T::from_f64((n - 2) as f64) + tol;
    for &e in eta {
        if sum - e - e > bound {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_unitary, RngSeed};
    use rand::Rng;
    use std::f64::consts::PI;

    fn haar64(n: usize, seed: u64) -> ComplexMatrix<f64> {
        haar_unitary(n, &mut RngSeed(seed).stream()).unwrap()
    }

    fn phase_diag(n: usize, seed: u64) -> ComplexMatrix<f64> {
        let mut rng = RngSeed(seed).stream();
        let phases: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        ComplexMatrix::diag_unit_phases(&phases)
    }

    fn permutation(n: usize, shift: usize) -> ComplexMatrix<f64> {
        ComplexMatrix::from_fn(n, n, |i, j| {
            if (i + shift) % n == j {
                num_complex::Complex64::new(1.0, 0.0)
            } else {
                num_complex::Complex64::new(0.0, 0.0)
            }
        })
    }

    #[test]
    fn frobenius_cost_of_equal_matrices_is_zero() {
        let u = haar64(5, 1);
        assert_eq!(frobenius_cost(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_cost_antipodal_is_4n() {
        let n = 8;
        let i = ComplexMatrix::<f64>::identity(n);
        let minus = ComplexMatrix::from_fn(n, n, |a, b| {
            if a == b {
                num_complex::Complex64::new(-1.0, 0.0)
            } else {
                num_complex::Complex64::new(0.0, 0.0)
            }
        });
        assert!((frobenius_cost(&i, &minus).unwrap() - 32.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_cost_matches_brute_force() {
        let u = haar64(8, 2);
        let x = haar64(8, 3);
        let mut brute = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                brute += (u[(i, j)] - x[(i, j)]).norm_sqr();
            }
        }
        assert!((frobenius_cost(&u, &x).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn magnitude_distance_zero_for_matched_and_phase_shifted() {
        let u = haar64(6, 4);
        assert!(magnitude_distance(&u, &u).unwrap() < 1e-12);
        let shifted = &phase_diag(6, 5) * &u;
        assert!(magnitude_distance(&u, &shifted).unwrap() < 1e-12);
    }

    #[test]
    fn magnitude_distance_of_cyclic_permutation() {
        // Against I at n = 4: the diagonal of XU† is empty of mass (4 unit
        // deficits) and each row has one unit off-diagonal magnitude: 8 total.
        let x = permutation(4, 1);
        let i = ComplexMatrix::<f64>::identity(4);
        assert!((magnitude_distance(&i, &x).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn intensity_distance_zero_and_derangement_extreme() {
        let u = haar64(8, 6);
        assert!(intensity_distance(&u, &u).unwrap() < 1e-12);
        let x = permutation(8, 3);
        let i = ComplexMatrix::<f64>::identity(8);
        // All diagonal intensities vanish: the distance saturates at 2N.
        assert!((intensity_distance(&i, &x).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn intensity_distance_matches_diagonal_identity() {
        // Σ|δ − s²| == 2N − 2Σ_i |[XU†]_ii|² for unitary pairs.
        for seed in 0..10u64 {
            let u = haar64(8, 100 + seed);
            let x = haar64(8, 200 + seed);
            let m = matmul(&x, &u.dagger()).unwrap();
            let diag_mass: f64 = (0..8).map(|i| m[(i, i)].norm_sqr()).sum();
            let rhs = 16.0 - 2.0 * diag_mass;
            let lhs = intensity_distance(&u, &x).unwrap();
            assert!((lhs - rhs).abs() < 1e-12, "identity violated: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn intensity_zero_iff_magnitude_zero() {
        let u = haar64(6, 7);
        let shifted = &phase_diag(6, 8) * &u;
        assert!(intensity_distance(&u, &shifted).unwrap() < 1e-12);
        assert!(magnitude_distance(&u, &shifted).unwrap() < 1e-12);
        let other = haar64(6, 9);
        assert!(intensity_distance(&u, &other).unwrap() > 1e-3);
        assert!(magnitude_distance(&u, &other).unwrap() > 1e-3);
    }

    #[test]
    fn both_distances_invariant_under_output_phases() {
        let u = haar64(8, 10);
        let x = haar64(8, 11);
        let shifted = &phase_diag(8, 12) * &x;
        let d0 = magnitude_distance(&u, &x).unwrap();
        let d1 = magnitude_distance(&u, &shifted).unwrap();
        assert!((d0 - d1).abs() < 1e-12);
        let v0 = intensity_distance(&u, &x).unwrap();
        let v1 = intensity_distance(&u, &shifted).unwrap();
        assert!((v0 - v1).abs() < 1e-12);
    }

    #[test]
    fn normalized_cost_hits_unit_extremes() {
        let n = 8;
        let i = ComplexMatrix::<f64>::identity(n);
        assert_eq!(normalized_cost(&i, &i, Metric::FrobeniusSq).unwrap(), 0.0);
        let minus = ComplexMatrix::from_fn(n, n, |a, b| {
            if a == b {
                num_complex::Complex64::new(-1.0, 0.0)
            } else {
                num_complex::Complex64::new(0.0, 0.0)
            }
        });
        assert!((normalized_cost(&i, &minus, Metric::FrobeniusSq).unwrap() - 1.0).abs() < 1e-12);
        let x = permutation(n, 3);
        assert!((normalized_cost(&i, &x, Metric::IntensityDistance).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_sinusoid_interpolates_three_points() {
        let truth = |phi: f64| 2.0 * (phi + 0.4).sin() + 5.0;
        let samples: Vec<(f64, f64)> = [0.0, PI / 2.0, PI].iter().map(|&p| (p, truth(p))).collect();
        let (fit, residual) = fit_sinusoid(&samples).unwrap();
        assert!((fit.amplitude - 2.0).abs() < 1e-12);
        assert!((fit.phase - 0.4).abs() < 1e-12);
        assert!((fit.offset - 5.0).abs() < 1e-12);
        assert!(residual < 1e-12);
    }

    #[test]
    fn fit_sinusoid_rejects_too_few_distinct_phases() {
        // Only two phases survive reduction mod 2π.
        let s = [(0.0, 1.0), (1.0, 0.5), (2.0 * PI, 1.0), (1.0 - 2.0 * PI, 0.5)];
        assert!(matches!(
            fit_sinusoid(&s),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn fit_sinusoid_rejects_rank_deficient_design() {
        // All phases equal mod π: sin and cos columns are collinear.
        let s = [(0.3, 1.0), (0.3 + PI, -1.0), (0.3 + 2.0 * PI, 1.0), (0.3 + 3.0 * PI, -1.0)];
        assert!(matches!(fit_sinusoid(&s), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn fit_sinusoid_recovers_dense_sweep() {
        let truth = |phi: f64| -0.7 * (phi - 1.3).sin() + 0.2;
        let samples: Vec<(f64, f64)> = (0..32)
            .map(|k| {
                let phi = 2.0 * PI * k as f64 / 32.0;
                (phi, truth(phi))
            })
            .collect();
        let (fit, residual) = fit_sinusoid(&samples).unwrap();
        assert!(residual < 1e-12);
        // -0.7 sin(φ - 1.3) = 0.7 sin(φ - 1.3 + π).
        assert!((fit.amplitude - 0.7).abs() < 1e-12);
        assert!((fit.phase - (PI - 1.3)).abs() < 1e-12);
    }

    #[test]
    fn horn_polyhedron_vertex_and_violation() {
        assert!(horn_polyhedron_contains(&[1.0, 1.0, 1.0, 1.0]).unwrap());
        // (1, 1, 0): Σ − 2η_3 = 2 > n − 2 = 1.
        assert!(!horn_polyhedron_contains(&[1.0, 1.0, 0.0]).unwrap());
        assert!(horn_polyhedron_contains::<f64>(&[1.0]).is_err());
    }

    #[test]
    fn horn_polyhedron_holds_for_haar_diagonals() {
        let mut rng = RngSeed(77).stream();
        for _ in 0..1000 {
            let u: ComplexMatrix<f64> = haar_unitary(8, &mut rng).unwrap();
            let eta: Vec<f64> = (0..8).map(|i| u[(i, i)].norm()).collect();
            assert!(horn_polyhedron_contains(&eta).unwrap());
        }
    }

    #[test]
    fn cost_rejects_mismatched_dimensions() {
        let a = ComplexMatrix::<f64>::identity(3);
        let b = ComplexMatrix::<f64>::identity(4);
        assert!(frobenius_cost(&a, &b).is_err());
        assert!(magnitude_distance(&a, &b).is_err());
        assert!(intensity_distance(&a, &b).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn intensity_distance_diagonal_identity(seed in 0u64..10_000, n in 2usize..9) {
                let mut rng = RngSeed(seed).stream();
                let u: ComplexMatrix<f64> = haar_unitary(n, &mut rng).unwrap();
                let x: ComplexMatrix<f64> = haar_unitary(n, &mut rng).unwrap();
                let m = matmul(&x, &u.dagger()).unwrap();
                let diag: f64 = (0..n).map(|i| m[(i, i)].norm_sqr()).sum();
                let rhs = 2.0 * n as f64 - 2.0 * diag;
                let lhs = intensity_distance(&u, &x).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12);
                prop_assert!(lhs >= 0.0 && lhs <= 2.0 * n as f64 + 1e-12);
            }

            #[test]
            fn distances_ignore_output_phases(seed in 0u64..10_000, n in 2usize..9) {
                let mut rng = RngSeed(seed).stream();
                let u: ComplexMatrix<f64> = haar_unitary(n, &mut rng).unwrap();
                let x: ComplexMatrix<f64> = haar_unitary(n, &mut rng).unwrap();
                let phases: Vec<f64> =
                    (0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
                let shifted = &ComplexMatrix::diag_unit_phases(&phases) * &x;
                let d = magnitude_distance(&u, &x).unwrap();
                let ds = magnitude_distance(&u, &shifted).unwrap();
                prop_assert!((d - ds).abs() <= 1e-12);
                let v = intensity_distance(&u, &x).unwrap();
                let vs = intensity_distance(&u, &shifted).unwrap();
                prop_assert!((v - vs).abs() <= 1e-12);
            }

            #[test]
            fn sinusoid_fit_recovers_exact_models(
                amp in 0.01f64..5.0,
                alpha in -3.0f64..3.0,
                offset in -2.0f64..2.0,
                points in 4usize..40,
            ) {
                let samples: Vec<(f64, f64)> = (0..points)
                    .map(|k| {
                        let phi = 2.0 * PI * k as f64 / points as f64;
                        (phi, amp * (phi + alpha).sin() + offset)
                    })
                    .collect();
                let (fit, residual) = fit_sinusoid(&samples).unwrap();
                prop_assert!(residual <= 1e-9 * (amp + offset.abs()).max(1.0));
                prop_assert!((fit.amplitude - amp).abs() <= 1e-9);
                prop_assert!((fit.offset - offset).abs() <= 1e-9);
            }

            #[test]
            fn haar_diagonals_stay_in_polytope(seed in 0u64..100_000, n in 2usize..10) {
                let mut rng = RngSeed(seed).stream();
                let u: ComplexMatrix<f64> = haar_unitary(n, &mut rng).unwrap();
                let eta: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
                prop_assert!(horn_polyhedron_contains(&eta).unwrap());
            }
        }
    }
}
