//! Dense complex matrices, density matrices and Lindblad superoperators.
//!
//! Density matrices are vectorized column by column, so that
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`. Every superoperator in the crate uses
//! this convention.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Entrywise Hermiticity tolerance for operators and states.
pub const HERMITIAN_TOL: f64 = 1e-9;
/// Allowed deviation of a density-matrix trace from one.
pub const TRACE_TOL: f64 = 1e-9;
/// Smallest eigenvalue accepted for a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("expected {expected} entries for a {dim}x{dim} matrix, got {found}")]
    BadLength { dim: usize, expected: usize, found: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not Hermitian (max |A - A†| = {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("negative rate {rate} for channel {index}")]
    NegativeRate { index: usize, rate: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("trace deviates from 1 by {deviation:.3e}")]
    Trace { deviation: f64 },
    #[error("state is not Hermitian (max |ρ - ρ†| = {deviation:.3e})")]
    Hermiticity { deviation: f64 },
    #[error("state has negative eigenvalue {min_eigenvalue:.3e}")]
    Positivity { min_eigenvalue: f64 },
    #[error("density matrix must be {expected}x{expected}, got {found}x{found}")]
    Dimension { expected: usize, found: usize },
}

/// Square dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_row_major(dim: usize, entries: &[C64]) -> Result<Self, OperatorError> {
        if entries.len() != dim * dim {
            return Err(OperatorError::BadLength {
                dim,
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Ok(Self(DMatrix::from_row_slice(dim, dim, entries)))
    }

    /// Convenience constructor from real row-major entries.
    pub fn from_real(dim: usize, entries: &[f64]) -> Result<Self, OperatorError> {
        let c: Vec<C64> = entries.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_row_major(dim, &c)
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_nalgebra(m: DMatrix<C64>) -> Result<Self, OperatorError> {
        if m.nrows() != m.ncols() {
            return Err(OperatorError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        Ok(Self(m))
    }

    pub fn as_nalgebra(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.0[(row, col)] = value;
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<C64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn conj(&self) -> Self {
        Self(self.0.conjugate())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * C64::new(c, 0.0))
    }

    pub fn scale_c(&self, c: C64) -> Self {
        Self(&self.0 * c)
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise deviation from Hermiticity, `max |A_ij - conj(A_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// Fails with the deviation when the matrix is not Hermitian. The tolerance
    /// is applied relative to the matrix scale so that Hamiltonians in rad/s
    /// are judged by the same standard as dimensionless operators.
    pub fn ensure_hermitian(&self) -> Result<(), OperatorError> {
        let deviation = self.hermiticity_error();
        if deviation > HERMITIAN_TOL * self.max_abs().max(1.0) {
            return Err(OperatorError::NotHermitian { deviation });
        }
        Ok(())
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{})", self.dim(), self.dim())?;
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| {
                    let z = self.0[(i, j)];
                    format!("{:+.4e}{:+.4e}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Add for ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(self.0 + rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl Sub for ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(self.0 - rhs.0)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Mul for ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(self.0 * rhs.0)
    }
}

impl Mul<&ComplexMatrix> for f64 {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        rhs.scale(self)
    }
}

impl Mul<ComplexMatrix> for f64 {
    type Output = ComplexMatrix;
    fn mul(self, rhs: ComplexMatrix) -> ComplexMatrix {
        rhs.scale(self)
    }
}

impl Neg for ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-self.0)
    }
}

/// Kronecker product, left factor outermost.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix(a.0.kronecker(&b.0))
}

/// `exp(-i h t)` for Hermitian `h`, via eigendecomposition.
pub fn expm_hermitian(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix, OperatorError> {
    h.ensure_hermitian()?;
    let eig = SymmetricEigen::new(h.0.clone());
    let phases = DVector::from_iterator(
        h.dim(),
        eig.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * t)),
    );
    let v = &eig.eigenvectors;
    let vd = DMatrix::from_diagonal(&phases);
    Ok(ComplexMatrix(v * vd * v.adjoint()))
}

/// Validated density matrix.
#[derive(Clone, PartialEq, Debug)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Accepts `m` when it satisfies the trace, Hermiticity and positivity
    /// tolerances.
    pub fn new(m: ComplexMatrix) -> Result<Self, StateError> {
        check_state(&m)?;
        Ok(Self(m))
    }

    /// Wraps without checking. Callers must validate before handing the
    /// state to anything user-visible.
    pub(crate) fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    /// Pure state `|ψ⟩⟨ψ|` from a normalized vector.
    pub fn pure(psi: &[C64]) -> Result<Self, StateError> {
        let v = DVector::from_column_slice(psi);
        let m = ComplexMatrix(&v * v.adjoint());
        Self::new(m)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale(1.0 / dim as f64))
    }

    /// Diagonal state with the given populations.
    pub fn diagonal(populations: &[f64]) -> Result<Self, StateError> {
        let d: Vec<C64> = populations.iter().map(|&p| C64::new(p, 0.0)).collect();
        Self::new(ComplexMatrix::from_diagonal(&d))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    pub fn validate(&self) -> Result<(), StateError> {
        check_state(&self.0)
    }

    /// Convex combination `Σ w_k ρ_k` with weights summing to one.
    pub fn mixture(states: &[(f64, &DensityMatrix)]) -> Result<Self, StateError> {
        let dim = states.first().map(|(_, s)| s.dim()).unwrap_or(1);
        let mut acc = ComplexMatrix::zeros(dim);
        for (w, s) in states {
            if s.dim() != dim {
                return Err(StateError::Dimension { expected: dim, found: s.dim() });
            }
            acc = &acc + &s.0.scale(*w);
        }
        Self::new(acc)
    }
}

fn check_state(m: &ComplexMatrix) -> Result<(), StateError> {
    let deviation = (m.trace() - C64::new(1.0, 0.0)).norm();
    if deviation > TRACE_TOL {
        return Err(StateError::Trace { deviation });
    }
    let deviation = m.hermiticity_error();
    if deviation > HERMITIAN_TOL {
        return Err(StateError::Hermiticity { deviation });
    }
    let min_eigenvalue = m.hermitian_eigenvalues()[0];
    if min_eigenvalue < -POSITIVITY_TOL {
        return Err(StateError::Positivity { min_eigenvalue });
    }
    Ok(())
}

/// Trace distance `½‖a − b‖₁` between Hermitian matrices.
pub fn trace_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    0.5 * (a - b).hermitian_eigenvalues().iter().map(|e| e.abs()).sum::<f64>()
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let sqrt_rho = psd_sqrt(rho.matrix());
    let inner = &(&sqrt_rho * sigma.matrix()) * &sqrt_rho;
    let s: f64 = inner.hermitian_eigenvalues().iter().map(|e| e.max(0.0).sqrt()).sum();
    s * s
}

fn psd_sqrt(m: &ComplexMatrix) -> ComplexMatrix {
    let h = (&m.0 + m.0.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let d = DVector::from_iterator(
        m.dim(),
        eig.eigenvalues.iter().map(|&e| C64::new(e.max(0.0).sqrt(), 0.0)),
    );
    let v = &eig.eigenvectors;
    ComplexMatrix(v * DMatrix::from_diagonal(&d) * v.adjoint())
}

/// Column-major vectorization of a square matrix.
pub fn vectorize(m: &ComplexMatrix) -> DVector<C64> {
    DVector::from_column_slice(m.0.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &DVector<C64>) -> Result<ComplexMatrix, OperatorError> {
    let dim = (v.len() as f64).sqrt().round() as usize;
    if dim * dim != v.len() {
        return Err(OperatorError::BadLength { dim, expected: dim * dim, found: v.len() });
    }
    Ok(ComplexMatrix(DMatrix::from_column_slice(dim, dim, v.as_slice())))
}

/// Linear map on vectorized density matrices.
#[derive(Clone, PartialEq, Debug)]
pub struct Superoperator(ComplexMatrix);

impl Superoperator {
    pub fn zeros(state_dim: usize) -> Self {
        Self(ComplexMatrix::zeros(state_dim * state_dim))
    }

    pub fn identity(state_dim: usize) -> Self {
        Self(ComplexMatrix::identity(state_dim * state_dim))
    }

    pub fn from_matrix(m: ComplexMatrix) -> Result<Self, OperatorError> {
        let state_dim = (m.dim() as f64).sqrt().round() as usize;
        if state_dim * state_dim != m.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: state_dim * state_dim,
                found: m.dim(),
            });
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    /// Dimension of the density matrices this map acts on.
    pub fn state_dim(&self) -> usize {
        (self.0.dim() as f64).sqrt().round() as usize
    }

    /// Applies the map to a matrix (not necessarily a valid state).
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix, OperatorError> {
        if rho.dim() != self.state_dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.state_dim(),
                found: rho.dim(),
            });
        }
        let out = &self.0 .0 * vectorize(rho);
        unvectorize(&out)
    }

    /// Composition: `self` after `other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0)
    }
}

/// Lindblad generator for `ρ̇ = −i[H,ρ] + Σ γ (L ρ L† − ½{L†L, ρ})`.
pub fn build_liouvillian<'a, I>(h: &ComplexMatrix, channels: I) -> Result<Superoperator, OperatorError>
where
    I: IntoIterator<Item = (&'a ComplexMatrix, f64)>,
{
    h.ensure_hermitian()?;
    let n = h.dim();
    let id = ComplexMatrix::identity(n);
    let mi = C64::new(0.0, -1.0);
    let mut l = (&kron(&id, h) - &kron(&h.transpose(), &id)).scale_c(mi);
    for (index, (jump, rate)) in channels.into_iter().enumerate() {
        if jump.dim() != n {
            return Err(OperatorError::DimensionMismatch { expected: n, found: jump.dim() });
        }
        if rate < 0.0 || rate.is_nan() {
            return Err(OperatorError::NegativeRate { index, rate });
        }
        if rate == 0.0 {
            continue;
        }
        let jdj = &jump.adjoint() * jump;
        let term = &(&kron(&jump.conj(), jump) - &kron(&id, &jdj).scale(0.5))
            - &kron(&jdj.transpose(), &id).scale(0.5);
        l = &l + &term.scale(rate);
    }
    Ok(Superoperator(l))
}

/// `exp(L t)` by scaling and squaring with a Padé approximant.
pub fn expm_superoperator(l: &Superoperator, t: f64) -> Result<Superoperator, OperatorError> {
    if t < 0.0 || t.is_nan() {
        return Err(OperatorError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(Superoperator::identity(l.state_dim()));
    }
    let scaled = &l.0 .0 * C64::new(t, 0.0);
    Ok(Superoperator(ComplexMatrix(scaled.exp())))
}
