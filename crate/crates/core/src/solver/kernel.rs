use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::net::FeatureMatrix;

/// Relative eigenvalue floor below which a kernel counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-12;

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// A symmetric `N × N` kernel with a cached positive-definite factorization.
///
/// Construction runs a jitter ladder: no jitter first, then
/// `1e-12·tr(K)/N` growing by 10× up to `1e-6·tr(K)/N`. The first rung whose
/// Cholesky factorization succeeds and clears the singularity floor is kept.
/// If none does, the kernel still exists (its spectrum is useful for
/// diagnostics) but every solve fails with [`Error::SingularKernel`].
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    jitter: f64,
    lambda_min: f64,
    lambda_max: f64,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl KernelMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "kernel columns",
                expected: n,
                got: entries.ncols(),
            });
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        let asym = (&entries - entries.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidConfig(format!("kernel is not symmetric (max |K - Kᵀ| = {asym:e})")));
        }
        // symmetrize exactly so the factorization sees a symmetric matrix
        let entries = (&entries + entries.transpose()) * 0.5;
        let (lambda_min, lambda_max) = extreme_eigenvalues(&entries);

        let mut kernel = KernelMatrix {
            entries,
            jitter: 0.0,
            lambda_min,
            lambda_max,
            factor: None,
        };
        kernel.factorize();
        Ok(kernel)
    }

    fn factorize(&mut self) {
        let n = self.n();
        if n == 0 {
            return;
        }
        let base = self.entries.trace() / n as f64;
        let mut rungs = vec![0.0];
        let mut j = JITTER_START;
        while j <= JITTER_MAX * (1.0 + 1e-9) {
            rungs.push(j * base);
            j *= 10.0;
        }
        for jitter in rungs {
            if !(self.lambda_min + jitter > SINGULAR_RATIO * self.lambda_max) {
                continue;
            }
            let mut m = self.entries.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                self.jitter = jitter;
                self.factor = Some(chol);
                return;
            }
        }
        self.jitter = JITTER_MAX * base;
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Diagonal shift used by the factorization (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Smallest eigenvalue of the unjittered matrix; may be ≤ 0.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn is_factored(&self) -> bool {
        self.factor.is_some()
    }

    fn singular(&self) -> Error {
        Error::SingularKernel {
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            jitter: self.jitter,
        }
    }

    /// `(K + jitter·𝟙)⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.factor.as_ref().ok_or_else(|| self.singular())?;
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "kernel right-hand side",
                expected: self.n(),
                got: b.len(),
            });
        }
        Ok(f.solve(b))
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let f = self.factor.as_ref().ok_or_else(|| self.singular())?;
        if b.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "kernel right-hand side",
                expected: self.n(),
                got: b.nrows(),
            });
        }
        Ok(f.solve(b))
    }

    /// Dense `(K + jitter·𝟙)⁻¹`; for small kernels and tests.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.solve_matrix(&DMatrix::identity(self.n(), self.n()))
    }
}

/// `K = ΦΦᵀ` with eigenvalues cached and the jitter ladder applied.
pub fn empirical_ntk(phi: &FeatureMatrix) -> Result<KernelMatrix> {
    KernelMatrix::new(phi.gram())
}

pub(crate) fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
