//! Direct solvers backed by `faer`.
//!
//! Systems below [`DENSE_LIMIT`] unknowns use a dense partially pivoted LU;
//! larger ones use a sparse LU with partial (row) pivoting, which is safe
//! for the zero multiplier block of saddle-point matrices. Both are followed
//! by a few steps of iterative refinement. All factorizations run
//! single-threaded so results do not depend on the thread count.

use std::sync::Once;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{FdError, Result};
use crate::sparse::{norm2, SparseMatrix};

pub const DENSE_LIMIT: usize = 5000;

static SEQUENTIAL: Once = Once::new();

pub(crate) fn force_sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

pub(crate) fn to_faer_sparse(a: &SparseMatrix) -> Result<SparseColMat<usize, f64>> {
    let trip: Vec<Triplet<usize, usize, f64>> = a
        .triplets()
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .collect();
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &trip)
        .map_err(|e| FdError::DimensionMismatch(format!("sparse conversion failed: {e:?}")))
}

pub(crate) fn to_faer_dense(a: &SparseMatrix) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplets() {
        m[(i, j)] = v;
    }
    m
}

enum Factor {
    Dense(faer::linalg::solvers::PartialPivLu<f64>),
    Sparse(faer::sparse::linalg::solvers::Lu<usize, f64>),
}

/// A factorized square matrix.
pub struct LuSolver {
    n: usize,
    factor: Factor,
}

impl LuSolver {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        force_sequential();
        let n = a.nrows();
        if a.ncols() != n {
            return Err(FdError::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let factor = if n < DENSE_LIMIT {
            Factor::Dense(to_faer_dense(a).partial_piv_lu())
        } else {
            let lu = to_faer_sparse(a)?
                .sp_lu()
                .map_err(|_| FdError::SingularMatrix(n))?;
            Factor::Sparse(lu)
        };
        Ok(Self { n, factor })
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.factor, Factor::Dense(_))
    }

    fn apply(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        match &self.factor {
            Factor::Dense(lu) => lu.solve_in_place(x.as_mut()),
            Factor::Sparse(lu) => lu.solve_in_place(x.as_mut()),
        }
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// Solves `A x = b` with up to three refinement steps against `a`.
    pub fn solve(&self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.apply(b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FdError::SingularMatrix(self.n));
        }
        let mut res = residual(a, &x, b);
        let mut rnorm = norm2(&res);
        for _ in 0..3 {
            if rnorm == 0.0 {
                break;
            }
            let dx = self.apply(&res);
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + di).collect();
            let cres = residual(a, &cand, b);
            let cnorm = norm2(&cres);
            if !(cnorm < rnorm) {
                break;
            }
            x = cand;
            res = cres;
            rnorm = cnorm;
        }
        Ok(x)
    }
}

/// `b - A x`, each row accumulated with compensated (Dot2) summation so
/// the cancellation in large stiffness rows does not swamp the result.
pub fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), a.ncols());
    (0..a.nrows())
        .map(|i| {
            let mut s = b[i];
            let mut c = 0.0;
            for (j, v) in a.row(i) {
                let p = -v * x[j];
                let ep = (-v).mul_add(x[j], -p);
                let t = s + p;
                let z = t - s;
                c += (s - (t - z)) + (p - z) + ep;
                s = t;
            }
            s + c
        })
        .collect()
}

/// `‖b - A x‖₂ / ‖b‖₂`, or the absolute residual when `b = 0`.
pub fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let r = norm2(&residual(a, x, b));
    let bn = norm2(b);
    if bn > 0.0 {
        r / bn
    } else {
        r
    }
}

/// Sparse Cholesky factor of a symmetric positive definite matrix.
pub struct CholeskySolver {
    n: usize,
    factor: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl CholeskySolver {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        force_sequential();
        let factor = to_faer_sparse(a)?
            .sp_cholesky(Side::Lower)
            .map_err(|_| FdError::SingularMatrix(a.nrows()))?;
        Ok(Self {
            n: a.nrows(),
            factor,
        })
    }

    /// Solves for every column of `rhs` in place.
    pub fn solve_columns(&self, rhs: &mut Mat<f64>) {
        assert_eq!(rhs.nrows(), self.n);
        self.factor.solve_in_place(rhs.as_mut());
    }
}
