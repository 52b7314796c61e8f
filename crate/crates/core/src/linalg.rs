//! Dense complex linear algebra and random-matrix generation.
//!
//! Matrices are small (ports ≤ 64), dense and row-major; there are no
//! sparse or blocked code paths on purpose.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexMatrix<T> {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    /// Build from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Diagonal matrix with entries `e^{i·phases[k]}`.
    pub fn diag_unit_phases(phases: &[T]) -> Self {
        let mut m = Self::zeros(phases.len(), phases.len());
        for (i, &phi) in phases.iter().enumerate() {
            m[(i, i)] = Complex::from_polar(T::one(), phi);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row `i` as a slice (row-major storage).
    pub fn row(&self, i: usize) -> &[Complex<T>] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column `j` copied out.
    pub fn col(&self, j: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn entries(&self) -> &[Complex<T>] {
        &self.data
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Plain transpose (no conjugation).
    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Squared Frobenius norm: sum of |entry|².
    pub fn frobenius_sq(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Entrywise difference.
    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.check_same_shape(rhs)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Maximum entrywise |a - b|.
    pub fn max_abs_diff(&self, rhs: &Self) -> Result<T> {
        self.check_same_shape(rhs)?;
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), T::max))
    }

    /// Scale row `i` by `factors[i]` in place (left-multiplication by a
    /// diagonal matrix, O(n²)).
    pub fn scale_rows(&mut self, factors: &[Complex<T>]) {
        assert_eq!(factors.len(), self.rows);
        for (row, f) in self.data.chunks_mut(self.cols).zip(factors) {
            for z in row {
                *z *= *f;
            }
        }
    }

    /// Scale column `j` by `factors[j]` in place (right-multiplication by a
    /// diagonal matrix, O(n²)).
    pub fn scale_cols(&mut self, factors: &[Complex<T>]) {
        assert_eq!(factors.len(), self.cols);
        for row in self.data.chunks_mut(self.cols) {
            for (z, f) in row.iter_mut().zip(factors) {
                *z *= *f;
            }
        }
    }

    /// Rank-one product `u vᵀ` (no conjugation).
    pub fn outer(u: &[Complex<T>], v: &[Complex<T>]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    /// max_ij |[M·M† − I]_ij|; zero for an exactly unitary matrix.
    pub fn unitarity_error(&self) -> T {
        debug_assert!(self.is_square());
        let n = self.rows;
        let mut worst = T::zero();
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..n {
                    acc += self[(i, k)] * self[(j, k)].conj();
                }
                if i == j {
                    acc.re -= T::one();
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }

    /// Whether the matrix is unitary within `tol` (max-norm of M·M† − I).
    pub fn is_unitary_within(&self, tol: T) -> bool {
        self.is_square() && self.unitarity_error() <= tol
    }

    fn check_same_shape(&self, rhs: &Self) -> Result<()> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(())
    }
}

impl<T> std::ops::Index<(usize, usize)> for ComplexMatrix<T> {
    type Output = Complex<T>;

    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for ComplexMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.cols + j]
    }
}

/// Checked dense product; entry (i, j) = Σ_k a_ik·b_kj.
pub fn matmul<T: Scalar>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = ComplexMatrix::zeros(a.rows, b.cols);
    // ikj loop order keeps the inner pass contiguous in both b and c.
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            let brow = b.row(k);
            let crow = &mut c.data[i * b.cols..(i + 1) * b.cols];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aik * *bj;
            }
        }
    }
    Ok(c)
}

impl<T: Scalar> std::ops::Mul for &ComplexMatrix<T> {
    type Output = ComplexMatrix<T>;

    /// Panics on dimension mismatch; use [`matmul`] for checked multiplication.
    fn mul(self, rhs: &ComplexMatrix<T>) -> ComplexMatrix<T> {
        matmul(self, rhs).expect("matrix dimension mismatch")
    }
}

/// Seed for a deterministic random stream. Identical seeds replay the exact
/// same sampling sequence, bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Deterministic stream derived from this seed.
    pub fn stream(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Sample an `n`×`n` unitary from the Haar measure.
///
/// Construction: an i.i.d. complex-Gaussian (Ginibre) matrix is
/// orthonormalized column by column (QR-style, with a second pass for
/// numerical orthogonality) and the triangular factor's diagonal phase is
/// normalized away. Column norms are real and positive here, so the phase
/// normalization makes the factorization unique and the Q factor
/// Haar-distributed.
pub fn haar_unitary<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<ComplexMatrix<T>> {
    if n == 0 {
        return Err(Error::InvalidConfig("unitary order must be at least 1".into()));
    }
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    // Column-major Ginibre draw so the sampling order is independent of how
    // the orthonormalization below walks the data.
    let mut cols: Vec<Vec<Complex<T>>> = (0..n)
        .map(|_| {
            (0..n)
                .map(|_| {
                    Complex::new(
                        T::sample_standard_normal(rng) * inv_sqrt2,
                        T::sample_standard_normal(rng) * inv_sqrt2,
                    )
                })
                .collect()
        })
        .collect();

    for j in 0..n {
        // Two orthogonalization passes keep the result unitary to machine
        // precision even for unlucky draws.
        for _pass in 0..2 {
            for i in 0..j {
                let proj = dot_conj(&cols[i], &cols[j]);
                let (head, tail) = cols.split_at_mut(j);
                for (z, c) in tail[0].iter_mut().zip(&head[i]) {
                    *z -= proj * *c;
                }
            }
        }
        let norm = cols[j]
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<T>()
            .sqrt();
        // The triangular factor's diagonal entry is this norm: real and
        // positive, so its phase normalization is the identity and the
        // factorization is the unique one that makes Q Haar.
        let inv = T::one() / norm;
        for z in &mut cols[j] {
            *z *= inv;
        }
    }

    Ok(ComplexMatrix::from_fn(n, n, |i, j| cols[j][i]))
}

fn dot_conj<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * *y;
    }
    acc
}
