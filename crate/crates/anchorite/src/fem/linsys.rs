//! Direct solvers for assembled tangent systems.
//!
//! Stiffness matrices from the meshes in this crate are either genuinely
//! small (homogenization cells) or have a small bandwidth (bars and
//! structured grids with row-major node numbering), so two classic direct
//! solvers cover everything: a dense partial-pivot LU and a compact banded
//! LU without pivoting (Golub & Van Loan, *Matrix Computations*, 4th ed.,
//! §4.5).  The banded variant runs in `O(n b^2)` time and `O(n b)` memory
//! for bandwidth `b`, which is what makes the finest bar meshes cheap.
//!
//! Elastoplastic tangents with non-associative flow are slightly
//! unsymmetric, so a Cholesky factorization is not an option here; the
//! banded LU relies on the diagonal dominance of well-posed stiffness
//! matrices instead of pivoting, and a vanishing pivot is reported as an
//! error rather than patched over.

use nalgebra::{DMatrix, DVector};

use super::FemError;

/// Sparse-ish stiffness storage selected from the matrix bandwidth.
///
/// Banded storage is chosen when the band (of width `2 b + 1`) is
/// substantially narrower than the full matrix; otherwise the matrix is
/// dense.  Entries outside the band are rejected by `add`, which would be
/// a programming error in the assembly.
#[derive(Debug, Clone)]
pub struct StiffnessMatrix {
    n: usize,
    storage: Storage,
}

#[derive(Debug, Clone)]
enum Storage {
    Dense(DMatrix<f64>),
    Banded { bw: usize, data: Vec<f64> },
}

impl StiffnessMatrix {
    /// Creates a zeroed `n x n` matrix able to hold entries with
    /// `|i - j| <= bandwidth`.
    pub fn new(n: usize, bandwidth: usize) -> Self {
        let bw = bandwidth.min(n.saturating_sub(1));
        // The banded factorization pays off once the band occupies less
        // than roughly half of each column.
        let storage = if n >= 64 && 2 * bw + 1 <= n / 2 {
            Storage::Banded { bw, data: vec![0.0; n * (2 * bw + 1)] }
        } else {
            Storage::Dense(DMatrix::zeros(n, n))
        };
        StiffnessMatrix { n, storage }
    }

    /// Matrix order.
    pub fn order(&self) -> usize {
        self.n
    }

    /// Accumulates `value` into entry `(i, j)`.
    ///
    /// # Panics
    /// Panics if the entry lies outside the declared bandwidth.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        match &mut self.storage {
            Storage::Dense(m) => m[(i, j)] += value,
            Storage::Banded { bw, data } => {
                let d = i as isize - j as isize;
                assert!(
                    d.unsigned_abs() <= *bw,
                    "entry ({i}, {j}) outside declared bandwidth {bw}"
                );
                data[j * (2 * *bw + 1) + (d + *bw as isize) as usize] += value;
            }
        }
    }

    /// Returns a dense copy, mainly for tests and small reductions.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Banded { bw, data } => {
                let mut m = DMatrix::zeros(self.n, self.n);
                for j in 0..self.n {
                    for d in -(*bw as isize)..=(*bw as isize) {
                        let i = j as isize + d;
                        if i >= 0 && (i as usize) < self.n {
                            m[(i as usize, j)] = data[j * (2 * *bw + 1) + (d + *bw as isize) as usize];
                        }
                    }
                }
                m
            }
        }
    }

    /// Factorizes the matrix, consuming it.
    pub fn factorize(self) -> Result<StiffnessFactor, FemError> {
        match self.storage {
            Storage::Dense(m) => {
                let lu = m.lu();
                // nalgebra's LU reports singularity lazily at solve time;
                // check the last pivot once here so callers get a clean error.
                if self.n > 0 && lu.u()[(self.n - 1, self.n - 1)].abs() < f64::MIN_POSITIVE {
                    return Err(FemError::LinearSolve("singular dense tangent matrix".into()));
                }
                Ok(StiffnessFactor { n: self.n, storage: FactorStorage::Dense(Box::new(lu)) })
            }
            Storage::Banded { bw, mut data } => {
                banded_lu(self.n, bw, &mut data)?;
                Ok(StiffnessFactor { n: self.n, storage: FactorStorage::Banded { bw, data } })
            }
        }
    }
}

/// A factorized stiffness matrix ready for repeated solves.
pub struct StiffnessFactor {
    n: usize,
    storage: FactorStorage,
}

impl std::fmt::Debug for StiffnessFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.storage {
            FactorStorage::Dense(_) => "dense",
            FactorStorage::Banded { .. } => "banded",
        };
        f.debug_struct("StiffnessFactor").field("n", &self.n).field("kind", &kind).finish()
    }
}

enum FactorStorage {
    Dense(Box<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>),
    Banded { bw: usize, data: Vec<f64> },
}

impl StiffnessFactor {
    /// Matrix order.
    pub fn order(&self) -> usize {
        self.n
    }

    /// Solves `K x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, FemError> {
        assert_eq!(rhs.len(), self.n, "right-hand side length must match the matrix order");
        match &self.storage {
            FactorStorage::Dense(lu) => lu
                .solve(rhs)
                .ok_or_else(|| FemError::LinearSolve("singular dense tangent matrix".into())),
            FactorStorage::Banded { bw, data } => Ok(banded_solve(self.n, *bw, data, rhs)),
        }
    }
}

/// In-place banded LU without pivoting; multipliers overwrite the
/// subdiagonal band, `U` the rest.
fn banded_lu(n: usize, bw: usize, data: &mut [f64]) -> Result<(), FemError> {
    let w = 2 * bw + 1;
    let idx = |i: usize, j: usize| j * w + (i + bw - j);
    for k in 0..n {
        let pivot = data[idx(k, k)];
        if !pivot.is_finite() || pivot.abs() < 1e-300 {
            return Err(FemError::LinearSolve(format!(
                "vanishing pivot {pivot} at row {k} of banded tangent matrix"
            )));
        }
        let hi = (k + bw).min(n - 1);
        for i in (k + 1)..=hi {
            let m = data[idx(i, k)] / pivot;
            data[idx(i, k)] = m;
            if m != 0.0 {
                for j in (k + 1)..=hi {
                    data[idx(i, j)] -= m * data[idx(k, j)];
                }
            }
        }
    }
    Ok(())
}

fn banded_solve(n: usize, bw: usize, data: &[f64], rhs: &DVector<f64>) -> DVector<f64> {
    let w = 2 * bw + 1;
    let idx = |i: usize, j: usize| j * w + (i + bw - j);
    let mut x = rhs.clone();
    // Forward substitution with the stored multipliers (unit lower part).
    for k in 0..n {
        let hi = (k + bw).min(n - 1);
        let xk = x[k];
        if xk != 0.0 {
            for i in (k + 1)..=hi {
                x[i] -= data[idx(i, k)] * xk;
            }
        }
    }
    // Back substitution with U.
    for k in (0..n).rev() {
        let hi = (k + bw).min(n - 1);
        let mut s = x[k];
        for j in (k + 1)..=hi {
            s -= data[idx(k, j)] * x[j];
        }
        x[k] = s / data[idx(k, k)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random diagonally dominant banded system for solver cross-checks.
    fn random_banded(n: usize, bw: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
            a[(i, i)] += 2.0 * (2 * bw + 1) as f64;
        }
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        (a, b)
    }

    #[test]
    fn banded_lu_matches_dense_lu() {
        let n = 120;
        let bw = 3;
        let (a, b) = random_banded(n, bw, 7);

        let mut banded = StiffnessMatrix::new(n, bw);
        assert!(
            matches!(banded.storage, Storage::Banded { .. }),
            "large narrow-band matrix should pick banded storage"
        );
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                banded.add(i, j, a[(i, j)]);
            }
        }
        let x_banded = banded.factorize().unwrap().solve(&b).unwrap();
        let x_dense = a.clone().lu().solve(&b).unwrap();
        assert_relative_eq!(x_banded, x_dense, max_relative = 1e-10);
        // Residual check against the original matrix.
        let r = &a * &x_banded - &b;
        assert!(r.norm() < 1e-9 * b.norm(), "banded solution residual too large: {}", r.norm());
    }

    #[test]
    fn small_systems_fall_back_to_dense_storage() {
        let mut m = StiffnessMatrix::new(3, 1);
        assert!(matches!(m.storage, Storage::Dense(_)), "small systems stay dense");
        m.add(0, 0, 2.0);
        m.add(1, 1, 3.0);
        m.add(2, 2, 4.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        let rhs = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let x = m.factorize().unwrap().solve(&rhs).unwrap();
        // Hand solve: [2 1 0; 1 3 0; 0 0 4].
        assert_relative_eq!(x[0], 0.2, max_relative = 1e-14);
        assert_relative_eq!(x[1], 0.6, max_relative = 1e-14);
        assert_relative_eq!(x[2], 0.75, max_relative = 1e-14);
    }

    #[test]
    fn to_dense_round_trips_banded_entries() {
        let n = 80;
        let bw = 2;
        let (a, _) = random_banded(n, bw, 11);
        let mut banded = StiffnessMatrix::new(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                banded.add(i, j, a[(i, j)]);
            }
        }
        assert_relative_eq!(banded.to_dense(), a, max_relative = 1e-15);
    }

    #[test]
    fn singular_banded_matrix_is_reported() {
        let n = 100;
        let mut m = StiffnessMatrix::new(n, 1);
        for i in 0..n {
            m.add(i, i, 1.0);
        }
        // Kill one pivot.
        m.add(40, 40, -1.0);
        let err = m.factorize().expect_err("singular matrix must fail to factorize");
        assert!(matches!(err, FemError::LinearSolve(_)), "got {err:?}");
    }

    #[test]
    fn singular_dense_matrix_is_reported() {
        let m = StiffnessMatrix::new(2, 1);
        let err = m.factorize().expect_err("zero matrix must fail");
        assert!(matches!(err, FemError::LinearSolve(_)), "got {err:?}");
    }

    #[test]
    #[should_panic(expected = "outside declared bandwidth")]
    fn out_of_band_entry_panics() {
        let mut m = StiffnessMatrix::new(200, 1);
        m.add(0, 100, 1.0);
    }
}
