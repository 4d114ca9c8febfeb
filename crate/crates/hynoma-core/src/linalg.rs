//! Dense complex linear algebra used by the beamforming and detection layers.
//!
//! Everything here operates on Hermitian matrices: eigendecompositions sorted
//! by descending eigenvalue, generalized eigenproblems reduced through a
//! Cholesky whitening of the right-hand matrix, and positive definite solves.

use crate::{CMat, CVec};
use alloc::vec::Vec;
use core::fmt;

/// Relative Frobenius tolerance for Hermitian symmetry checks.
const HERMITIAN_TOL: f64 = 1e-10;

/// Errors reported by the dense solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum LinalgError {
    /// Input matrix is not square.
    NotSquare {
        /// Row count of the offending matrix.
        rows: usize,
        /// Column count of the offending matrix.
        cols: usize,
    },
    /// Two operands have incompatible shapes.
    DimensionMismatch {
        /// Shape of the left operand.
        left: (usize, usize),
        /// Shape of the right operand.
        right: (usize, usize),
    },
    /// Matrix deviates from Hermitian symmetry beyond tolerance.
    NotHermitian {
        /// Relative Frobenius deviation `‖A - A^H‖ / ‖A‖`.
        deviation: f64,
    },
    /// Cholesky factorization failed; matrix is not positive definite.
    NotPositiveDefinite,
    /// A requested subspace dimension exceeds the matrix order.
    SubspaceTooLarge {
        /// Requested dimension.
        requested: usize,
        /// Matrix order.
        order: usize,
    },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::NotSquare { rows, cols } => {
                write!(f, "matrix is {rows}x{cols}, expected square")
            }
            LinalgError::DimensionMismatch { left, right } => write!(
                f,
                "incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            LinalgError::NotHermitian { deviation } => {
                write!(f, "matrix is not Hermitian (relative deviation {deviation:.3e})")
            }
            LinalgError::NotPositiveDefinite => {
                write!(f, "matrix is not positive definite")
            }
            LinalgError::SubspaceTooLarge { requested, order } => {
                write!(f, "requested {requested} eigenvectors from an order-{order} problem")
            }
        }
    }
}

impl core::error::Error for LinalgError {}

/// One eigenvalue with its unit-norm eigenvector.
#[derive(Debug, Clone)]
pub struct EigPair {
    /// Real eigenvalue.
    pub value: f64,
    /// Unit-norm eigenvector.
    pub vector: CVec,
}

fn check_square(a: &CMat) -> Result<(), LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(())
}

fn check_hermitian(a: &CMat) -> Result<(), LinalgError> {
    let norm = a.norm();
    if norm == 0.0 {
        return Ok(());
    }
    let deviation = (a - a.adjoint()).norm() / norm;
    if deviation > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian { deviation });
    }
    Ok(())
}

/// Symmetric part `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    let mut h = (a + a.adjoint()).scale(0.5);
    for i in 0..h.nrows() {
        h[(i, i)].im = 0.0;
    }
    h
}

/// Relative Frobenius distance `‖A - B‖ / max(‖B‖, ε)`.
pub fn rel_frobenius(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Cholesky with an explicit positivity check on the pivots; the complex
/// factorization in nalgebra happily takes square roots of negative pivots,
/// so indefinite inputs must be caught by inspecting the factor diagonal.
fn cholesky_pd(b: &CMat) -> Result<nalgebra::Cholesky<crate::C64, nalgebra::Dyn>, LinalgError> {
    let chol = b.clone().cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    for i in 0..b.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0) || d.im.abs() > 1e-10 * d.re.abs() {
            return Err(LinalgError::NotPositiveDefinite);
        }
    }
    Ok(chol)
}

fn unit(v: &mut CVec) {
    let n = v.norm();
    if n > 0.0 {
        *v /= crate::c64(n, 0.0);
    }
}

/// Full eigendecomposition of a Hermitian matrix, eigenvalues descending.
///
/// The input is validated against Hermitian symmetry and symmetrized before
/// factorization so accumulated round-off cannot leak into complex
/// eigenvalues. Eigenvectors come back unit-norm.
pub fn hermitian_eig(a: &CMat) -> Result<Vec<EigPair>, LinalgError> {
    check_square(a)?;
    check_hermitian(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let se = hermitian_part(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[j]
            .partial_cmp(&se.eigenvalues[i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    Ok(order
        .into_iter()
        .map(|i| {
            let mut vector: CVec = se.eigenvectors.column(i).into_owned();
            unit(&mut vector);
            EigPair { value: se.eigenvalues[i], vector }
        })
        .collect())
}

/// Solves the Hermitian generalized eigenproblem `A x = λ B x` with `B`
/// positive definite; pairs are returned with eigenvalues descending and
/// eigenvectors unit-norm.
///
/// Reduction goes through the Cholesky factor `B = L L^H`: the standard
/// problem `L⁻¹ A L⁻ᴴ v = λ v` is solved and eigenvectors are mapped back as
/// `x = L⁻ᴴ v`.
pub fn generalized_eig(a: &CMat, b: &CMat) -> Result<Vec<EigPair>, LinalgError> {
    check_square(a)?;
    check_square(b)?;
    if a.nrows() != b.nrows() {
        return Err(LinalgError::DimensionMismatch {
            left: (a.nrows(), a.ncols()),
            right: (b.nrows(), b.ncols()),
        });
    }
    check_hermitian(a)?;
    check_hermitian(b)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let chol = cholesky_pd(b)?;
    let l = chol.l();
    let t = l
        .solve_lower_triangular(a)
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let t2 = l
        .solve_lower_triangular(&t.adjoint())
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let whitened = hermitian_part(&t2.adjoint());
    let se = whitened.symmetric_eigen();
    let lh = l.adjoint();
    let mut pairs: Vec<EigPair> = (0..n)
        .map(|i| {
            let v: CVec = se.eigenvectors.column(i).into_owned();
            let mut vector = lh
                .solve_upper_triangular(&v)
                .ok_or(LinalgError::NotPositiveDefinite)?;
            unit(&mut vector);
            Ok(EigPair { value: se.eigenvalues[i], vector })
        })
        .collect::<Result<_, LinalgError>>()?;
    pairs.sort_by(|p, q| q.value.partial_cmp(&p.value).unwrap_or(core::cmp::Ordering::Equal));
    Ok(pairs)
}

/// Top `d` generalized eigenpairs of `(A, B)`, eigenvalues descending.
pub fn generalized_eig_top(a: &CMat, b: &CMat, d: usize) -> Result<Vec<EigPair>, LinalgError> {
    if d > a.nrows() {
        return Err(LinalgError::SubspaceTooLarge { requested: d, order: a.nrows() });
    }
    let mut pairs = generalized_eig(a, b)?;
    pairs.truncate(d);
    Ok(pairs)
}

/// Solves `B X = Y` for Hermitian positive definite `B` via Cholesky.
pub fn solve_hermitian_pd(b: &CMat, y: &CMat) -> Result<CMat, LinalgError> {
    check_square(b)?;
    if b.nrows() != y.nrows() {
        return Err(LinalgError::DimensionMismatch {
            left: (b.nrows(), b.ncols()),
            right: (y.nrows(), y.ncols()),
        });
    }
    let chol = cholesky_pd(b)?;
    Ok(chol.solve(y))
}

/// Hermitian square root factor `F` with `F F^H = A`, for positive
/// semidefinite `A`.
///
/// Uses the eigendecomposition and floors slightly negative round-off
/// eigenvalues at zero, so covariance matrices that are only numerically
/// semidefinite still factor.
pub fn psd_sqrt(a: &CMat) -> Result<CMat, LinalgError> {
    let pairs = hermitian_eig(a)?;
    let n = a.nrows();
    let floor = -1e-8 * pairs.first().map_or(0.0, |p| p.value.abs()).max(f64::MIN_POSITIVE);
    let mut f = CMat::zeros(n, n);
    for (j, p) in pairs.iter().enumerate() {
        if p.value < floor {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let s = libm::sqrt(p.value.max(0.0));
        for i in 0..n {
            f[(i, j)] = p.vector[i] * crate::c64(s, 0.0);
        }
    }
    Ok(f)
}
