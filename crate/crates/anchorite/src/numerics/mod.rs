//! Dense symmetric linear algebra, quasi-Newton optimization and clustering
//! primitives shared by the rest of the library.
//!
//! Everything in this module is a pure function of its inputs: no global
//! state, deterministic results for fixed seeds.

mod bfgs;
mod kmeans;

pub use bfgs::{bfgs_minimize, BfgsResult};
pub use kmeans::{kmeans, ClusterResult};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Errors produced by the numerics primitives.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// Factorization failed even after exhausting the jitter escalation.
    #[error("matrix not positive definite after {tries} attempts (last jitter {last_jitter:.3e})")]
    NotPositiveDefinite { tries: usize, last_jitter: f64 },
    /// An input had the wrong length or order.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// A matrix claimed to be symmetric was not.
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    /// The objective or its gradient evaluated to NaN or infinity.
    #[error("objective or gradient evaluated to a non-finite value")]
    NonFiniteObjective,
    /// k-means was asked for more clusters than there are samples.
    #[error("k-means requires at least {k} samples, got {n}")]
    TooFewSamples { k: usize, n: usize },
}

/// Relative asymmetry tolerated by [`SymMatrix::new`].
const SYMMETRY_TOL: f64 = 1e-12;

/// A dense symmetric real matrix, validated on construction.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Wraps a dense matrix after checking that it is square, non-empty and
    /// symmetric to within `1e-12` relative to its largest entry.
    pub fn new(data: DMatrix<f64>) -> Result<Self, NumericsError> {
        if data.nrows() != data.ncols() || data.nrows() == 0 {
            return Err(NumericsError::DimensionMismatch {
                expected: data.nrows().max(1),
                got: data.ncols(),
            });
        }
        let scale = data.amax().max(1.0);
        let mut asymmetry: f64 = 0.0;
        for i in 0..data.nrows() {
            for j in 0..i {
                asymmetry = asymmetry.max((data[(i, j)] - data[(j, i)]).abs());
            }
        }
        asymmetry /= scale;
        if asymmetry > SYMMETRY_TOL {
            return Err(NumericsError::NotSymmetric { asymmetry });
        }
        Ok(Self { data })
    }

    /// Builds an order-`n` symmetric matrix by evaluating `f` on the lower
    /// triangle (including the diagonal) and mirroring it, so symmetry holds
    /// by construction.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Self { data }
    }

    /// Matrix order (number of rows = columns).
    pub fn order(&self) -> usize {
        self.data.nrows()
    }

    /// Borrows the underlying dense storage.
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Consumes the wrapper and returns the dense storage.
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }
}

/// Lower-triangular Cholesky factor of a [`SymMatrix`], together with the
/// diagonal jitter that had to be added for the factorization to succeed.
#[derive(Debug, Clone)]
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl CholFactor {
    /// Order of the factored matrix.
    pub fn order(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Jitter added to the diagonal: the requested base value unless
    /// escalation was needed, `0.0` only when no base was requested.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The lower-triangular factor `L` with `L·Lᵀ = M + jitter·I`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `log det (M + jitter·I) = 2 Σᵢ ln Lᵢᵢ`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L w = v` by forward substitution (half of a full solve; used
    /// for quadratic forms like `vᵀ M⁻¹ v = ‖L⁻¹v‖²`).
    pub fn solve_lower(&self, v: &DVector<f64>) -> Result<DVector<f64>, NumericsError> {
        let n = self.order();
        if v.len() != n {
            return Err(NumericsError::DimensionMismatch { expected: n, got: v.len() });
        }
        // The factor's diagonal is strictly positive, so the triangular
        // solve cannot fail.
        Ok(self
            .chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal"))
    }

    /// Explicit inverse of the factored matrix. Cubic cost; reserved for
    /// small systems (e.g. trace terms in marginal-likelihood gradients).
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Factors `m + jitter·I`, escalating the jitter multiplicatively (×10 per
/// retry starting at `jitter0`) until the Cholesky decomposition succeeds.
///
/// The base jitter is applied unconditionally: a symmetric matrix that is
/// ill conditioned but still numerically positive definite factors without
/// complaint, and the resulting solves are garbage. Ridge regularization by
/// `jitter0` bounds the condition number up front, while escalation (`10·
/// jitter0, 100·jitter0, …`, at most `max_tries` retries) only handles the
/// genuinely indefinite leftovers. Passing `jitter0 = 0` requests a single
/// unregularized attempt. The jitter actually used is reported in the
/// returned factor.
pub fn cholesky_with_jitter(
    m: &SymMatrix,
    jitter0: f64,
    max_tries: usize,
) -> Result<CholFactor, NumericsError> {
    assert!(jitter0 >= 0.0, "jitter0 must be non-negative");
    let mut jitter = jitter0;
    let mut tries = 0;
    loop {
        let mut trial = m.data.clone();
        if jitter > 0.0 {
            for i in 0..trial.nrows() {
                trial[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(trial) {
            return Ok(CholFactor { chol, jitter });
        }
        tries += 1;
        if tries > max_tries || jitter0 == 0.0 {
            return Err(NumericsError::NotPositiveDefinite { tries, last_jitter: jitter });
        }
        jitter *= 10.0;
    }
}

/// Solves `(m + jitter·I) x = rhs` using a previously computed factor.
pub fn chol_solve(f: &CholFactor, rhs: &DVector<f64>) -> Result<DVector<f64>, NumericsError> {
    if rhs.len() != f.order() {
        return Err(NumericsError::DimensionMismatch { expected: f.order(), got: rhs.len() });
    }
    Ok(f.chol.solve(rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut impl Rng) -> SymMatrix {
        // A·Aᵀ + n·I is comfortably positive definite.
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut m = &a * a.transpose();
        for i in 0..n {
            m[(i, i)] += n as f64;
        }
        SymMatrix::new(m).unwrap()
    }

    #[test]
    fn identity_factors_at_the_base_jitter() {
        let m = SymMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let f = cholesky_with_jitter(&m, 1e-10, 10).unwrap();
        assert_eq!(f.jitter(), 1e-10, "base jitter is applied up front, not on demand");
        assert_relative_eq!(f.l(), DMatrix::identity(3, 3), epsilon = 1e-9);

        let unregularized = cholesky_with_jitter(&m, 0.0, 0).unwrap();
        assert_eq!(unregularized.jitter(), 0.0);
        assert_relative_eq!(unregularized.l(), DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn near_singular_spd_factors_cleanly() {
        let m = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0000001])).unwrap();
        let f = cholesky_with_jitter(&m, 1e-10, 10).unwrap();
        assert_eq!(f.jitter(), 1e-10);
        assert_relative_eq!(f.l()[(0, 0)], 2.0, epsilon = 1e-9);
        // L·Lᵀ must reproduce the input.
        let rec = f.l() * f.l().transpose();
        assert_relative_eq!(rec, m.as_matrix().clone(), epsilon = 1e-8);
    }

    #[test]
    fn singular_matrix_needs_small_jitter() {
        // Eigenvalues 2 and 0: plain Cholesky may or may not survive the
        // zero eigenvalue in floating point, but the reported jitter must
        // stay small and the factor must reproduce the jittered matrix.
        let m = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        let f = cholesky_with_jitter(&m, 1e-10, 10).unwrap();
        assert!(f.jitter() <= 1e-2);
        let mut jittered = m.as_matrix().clone();
        for i in 0..2 {
            jittered[(i, i)] += f.jitter();
        }
        let rec = f.l() * f.l().transpose();
        assert!((rec - &jittered).norm() <= 1e-8 * jittered.norm().max(1.0));
    }

    #[test]
    fn negative_definite_fails_after_escalation() {
        let m = SymMatrix::new(-DMatrix::identity(3, 3)).unwrap();
        let err = cholesky_with_jitter(&m, 1e-10, 5).unwrap_err();
        match err {
            NumericsError::NotPositiveDefinite { tries, .. } => assert_eq!(tries, 6),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let id = SymMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let f = cholesky_with_jitter(&id, 0.0, 0).unwrap();
        let x = chol_solve(&f, &DVector::from_row_slice(&[1.0, 2.0, 3.0])).unwrap();
        assert_relative_eq!(x, DVector::from_row_slice(&[1.0, 2.0, 3.0]), epsilon = 1e-14);

        let d = SymMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(&[4.0, 9.0]))).unwrap();
        let f = cholesky_with_jitter(&d, 0.0, 0).unwrap();
        let x = chol_solve(&f, &DVector::from_row_slice(&[8.0, 27.0])).unwrap();
        assert_relative_eq!(x, DVector::from_row_slice(&[2.0, 3.0]), epsilon = 1e-12);
    }

    #[test]
    fn solve_matches_gaussian_elimination_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = random_spd(5, &mut rng);
        let rhs = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
        let f = cholesky_with_jitter(&m, 0.0, 0).unwrap();
        let x = chol_solve(&f, &rhs).unwrap();
        // Oracle: LU with partial pivoting, an independent code path.
        let oracle = m.as_matrix().clone().lu().solve(&rhs).unwrap();
        assert_relative_eq!(x, oracle, epsilon = 1e-8);
    }

    #[test]
    fn solve_rejects_wrong_length() {
        let id = SymMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let f = cholesky_with_jitter(&id, 0.0, 0).unwrap();
        assert!(matches!(
            chol_solve(&f, &DVector::zeros(2)),
            Err(NumericsError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(NumericsError::NotSymmetric { .. })));
    }

    #[test]
    fn solve_lower_reproduces_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_spd(6, &mut rng);
        let v = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let f = cholesky_with_jitter(&m, 0.0, 0).unwrap();
        let w = f.solve_lower(&v).unwrap();
        let direct = v.dot(&m.as_matrix().clone().lu().solve(&v).unwrap());
        assert_relative_eq!(w.norm_squared(), direct, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn log_det_matches_lu_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_spd(8, &mut rng);
        let f = cholesky_with_jitter(&m, 0.0, 0).unwrap();
        let det = m.as_matrix().determinant();
        assert_relative_eq!(f.log_det(), det.ln(), epsilon = 1e-9, max_relative = 1e-9);
    }
}
