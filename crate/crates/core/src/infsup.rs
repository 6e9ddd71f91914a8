//! Numerical inf-sup test for the pairing of the multiplier space with the
//! immersed space.
//!
//! With `D = h2² N1` and `S = C2ᵀ D⁻¹ C2`, the pencil `S v = σ N2 v` has at
//! most `m = dim Λh` nonzero eigenvalues. The inf-sup estimate is the square
//! root of the m-th largest one, which equals the smallest eigenvalue of the
//! m×m matrix `M = D^{-1/2} C2 N2⁻¹ C2ᵀ D^{-1/2}`. Up to
//! [`MAX_DENSE_MULTIPLIERS`] multipliers `M` is formed and diagonalized
//! densely; above that, Lanczos runs on `M⁻¹`, applied through a sparse LU
//! of the saddle matrix `[[N2, Bᵀ], [B, 0]]` with `B = D^{-1/2} C2`.
//! [`pencil_dense`] and [`pencil_svd`] are independent checks on small
//! problems.

use std::fmt::Write as _;

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FdError, Result};
use crate::solver::{force_sequential, to_faer_dense, CholeskySolver, LuSolver};
use crate::space::FeSpace;
use crate::sparse::{dot, norm2, SparseMatrix};
use crate::system::{mass, stiffness};

/// Upper bound on `dim Λh` for the dense m×m eigenproblem.
pub const MAX_DENSE_MULTIPLIERS: usize = 6000;

/// `σ_min ≤ KERNEL_TOLERANCE · σ_max` is read as an exact zero: `C2ᵀ` has a
/// kernel and `γ = 0`.
pub const KERNEL_TOLERANCE: f64 = 1e-12;

/// Lanczos stops once the Ritz residual falls below this fraction of the
/// Ritz value.
pub const LANCZOS_TOLERANCE: f64 = 1e-10;
const LANCZOS_MAX_STEPS: usize = 300;

const SOLVE_BLOCK: usize = 256;

/// Smallest relevant generalized eigenvalue and its square root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfSupEstimate {
    pub sigma_min: f64,
    pub gamma: f64,
}

impl InfSupEstimate {
    fn from_sigma(sigma_min: f64) -> Self {
        Self {
            sigma_min,
            gamma: sigma_min.max(0.0).sqrt(),
        }
    }

    fn with_kernel_check(sigma_min: f64, sigma_max: f64) -> Self {
        if sigma_min <= KERNEL_TOLERANCE * sigma_max {
            Self { sigma_min, gamma: 0.0 }
        } else {
            Self::from_sigma(sigma_min)
        }
    }
}

/// `(N1, N2)`: the P0 mass matrix of `lambda` and the H¹ matrix
/// (stiffness + mass) of `v2`.
pub fn build_norm_matrices(v2: &FeSpace, lambda: &FeSpace) -> Result<(SparseMatrix, SparseMatrix)> {
    if v2.mesh().num_cells() != lambda.mesh().num_cells() {
        return Err(FdError::DimensionMismatch(
            "norm matrices need both spaces on the immersed mesh".into(),
        ));
    }
    let n1 = mass(lambda);
    let k = stiffness(v2, 1.0);
    let m = mass(v2);
    let n2 = SparseMatrix::from_triplets(k.nrows(), k.ncols(), k.triplets().chain(m.triplets()).collect());
    Ok((n1, n2))
}

fn check_dims(c2: &SparseMatrix, n1: &SparseMatrix, n2: &SparseMatrix, h2: f64) -> Result<Vec<f64>> {
    let (m, n) = (c2.nrows(), c2.ncols());
    if n1.nrows() != m || n1.ncols() != m || n2.nrows() != n || n2.ncols() != n {
        return Err(FdError::DimensionMismatch(format!(
            "C2 is {m}x{n}, N1 is {}x{}, N2 is {}x{}",
            n1.nrows(),
            n1.ncols(),
            n2.nrows(),
            n2.ncols()
        )));
    }
    if !(h2 > 0.0) {
        return Err(FdError::InvalidParameter(format!("h2 must be positive, got {h2}")));
    }
    let d: Vec<f64> = n1.diagonal().iter().map(|v| h2 * h2 * v).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(FdError::InvalidParameter("N1 must have a positive diagonal".into()));
    }
    Ok(d)
}

/// Production estimate: dense in `M` for small `m`, Lanczos otherwise.
pub fn infsup_constant(c2: &SparseMatrix, n1: &SparseMatrix, n2: &SparseMatrix, h2: f64) -> Result<InfSupEstimate> {
    if c2.nrows() > MAX_DENSE_MULTIPLIERS {
        infsup_lanczos(c2, n1, n2, h2)
    } else {
        infsup_dense(c2, n1, n2, h2)
    }
}

/// Forms `M` column block by column block and takes its full spectrum.
pub fn infsup_dense(c2: &SparseMatrix, n1: &SparseMatrix, n2: &SparseMatrix, h2: f64) -> Result<InfSupEstimate> {
    let d = check_dims(c2, n1, n2, h2)?;
    let (m, n) = (c2.nrows(), c2.ncols());
    let scale: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let chol = CholeskySolver::new(n2)?;
    let blocks: Vec<(usize, Mat<f64>)> = (0..m)
        .step_by(SOLVE_BLOCK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|j0| {
            let j1 = (j0 + SOLVE_BLOCK).min(m);
            // columns j0..j1 of C2ᵀ D^{-1/2}
            let mut x = Mat::<f64>::zeros(n, j1 - j0);
            for j in j0..j1 {
                for (k, v) in c2.row(j) {
                    x[(k, j - j0)] = v * scale[j];
                }
            }
            chol.solve_columns(&mut x);
            let mut out = Mat::<f64>::zeros(m, j1 - j0);
            for r in 0..m {
                for j in 0..j1 - j0 {
                    out[(r, j)] = scale[r] * c2.row(r).map(|(k, v)| v * x[(k, j)]).sum::<f64>();
                }
            }
            (j0, out)
        })
        .collect();
    let mut mm = Mat::<f64>::zeros(m, m);
    for (j0, b) in blocks {
        for j in 0..b.ncols() {
            for r in 0..m {
                mm[(r, j0 + j)] = b[(r, j)];
            }
        }
    }
    let sym = Mat::<f64>::from_fn(m, m, |i, j| 0.5 * (mm[(i, j)] + mm[(j, i)]));
    force_sequential();
    let eig = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| FdError::EigenFailure(format!("{e:?}")))?;
    Ok(InfSupEstimate::with_kernel_check(eig[0], eig[m - 1]))
}

/// Shift-invert Lanczos: the largest eigenvalue of `M⁻¹` is `1/σ_min`. A
/// singular saddle matrix means `C2ᵀ` has a kernel.
pub fn infsup_lanczos(c2: &SparseMatrix, n1: &SparseMatrix, n2: &SparseMatrix, h2: f64) -> Result<InfSupEstimate> {
    let d = check_dims(c2, n1, n2, h2)?;
    let (m, n) = (c2.nrows(), c2.ncols());
    require_rank(m, n)?;
    let scale: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let b = SparseMatrix::from_triplets(m, n, c2.triplets().map(|(i, k, v)| (i, k, v * scale[i])).collect());

    // σ_max from the forward operator, for the kernel test
    let chol = CholeskySolver::new(n2)?;
    let forward = |x: &[f64]| -> Result<Vec<f64>> {
        let bt = b.mul_vec_transpose(x);
        let mut y = Mat::<f64>::from_fn(n, 1, |i, _| bt[i]);
        chol.solve_columns(&mut y);
        Ok(b.mul_vec(&(0..n).map(|i| y[(i, 0)]).collect::<Vec<_>>()))
    };
    let sigma_max = lanczos_largest(m, forward, 1e-6)?;

    let bt = b.transpose();
    let saddle = SparseMatrix::block(&[vec![Some(n2), Some(&bt)], vec![Some(&b), None]], &[n, m], &[n, m])?;
    let lu = match LuSolver::new(&saddle) {
        Ok(lu) => lu,
        Err(FdError::SingularMatrix(_)) => return Ok(InfSupEstimate { sigma_min: 0.0, gamma: 0.0 }),
        Err(e) => return Err(e),
    };
    let inverse = |x: &[f64]| -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; n + m];
        rhs[n..].copy_from_slice(x);
        let z = lu.solve(&saddle, &rhs)?;
        Ok(z[n..].iter().map(|v| -v).collect())
    };
    let theta = match lanczos_largest(m, inverse, LANCZOS_TOLERANCE) {
        Ok(t) => t,
        Err(FdError::SingularMatrix(_)) => return Ok(InfSupEstimate { sigma_min: 0.0, gamma: 0.0 }),
        Err(e) => return Err(e),
    };
    Ok(InfSupEstimate::with_kernel_check(1.0 / theta, sigma_max))
}

/// Largest eigenvalue of the symmetric positive semidefinite operator `op`
/// by Lanczos with full reorthogonalization, started from a fixed vector.
fn lanczos_largest(n: usize, mut op: impl FnMut(&[f64]) -> Result<Vec<f64>>, tol: f64) -> Result<f64> {
    force_sequential();
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_749_895).fract()).collect();
    let qn = norm2(&q);
    q.iter_mut().for_each(|v| *v /= qn);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let (mut alpha, mut beta) = (Vec::new(), Vec::<f64>::new());
    let steps = LANCZOS_MAX_STEPS.min(n);
    for k in 0..steps {
        let mut w = op(&q)?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(FdError::SingularMatrix(n));
        }
        alpha.push(dot(&w, &q));
        basis.push(q);
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let b = norm2(&w);
        let last = k + 1 == steps;
        if k % 5 == 4 || last || b == 0.0 {
            let (theta, s_last) = tridiagonal_top(&alpha, &beta)?;
            let converged = (b * s_last).abs() <= tol * theta.abs();
            if converged || last || b <= f64::EPSILON * theta.abs() {
                if !converged && b > f64::EPSILON * theta.abs() {
                    return Err(FdError::EigenFailure(format!(
                        "Lanczos did not converge in {steps} steps (residual {:.3e})",
                        (b * s_last).abs() / theta.abs()
                    )));
                }
                return Ok(theta);
            }
        }
        beta.push(b);
        q = w.into_iter().map(|v| v / b).collect();
    }
    unreachable!("the last step always returns")
}

/// Top eigenvalue of the symmetric tridiagonal matrix and the last
/// component of its eigenvector.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> Result<(f64, f64)> {
    let k = alpha.len();
    let t = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let eig = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| FdError::EigenFailure(format!("{e:?}")))?;
    Ok((eig.S().column_vector()[k - 1], eig.U()[(k - 1, k - 1)]))
}

fn dense_lower_factor(n2: &SparseMatrix) -> Result<Mat<f64>> {
    force_sequential();
    let llt = to_faer_dense(n2)
        .llt(Side::Lower)
        .map_err(|e| FdError::EigenFailure(format!("N2 is not positive definite: {e:?}")))?;
    Ok(llt.L().to_owned())
}

fn require_rank(m: usize, n: usize) -> Result<()> {
    if m > n {
        return Err(FdError::DimensionMismatch(format!(
            "{m} multipliers exceed {n} immersed dofs; the m-th largest eigenvalue is undefined"
        )));
    }
    Ok(())
}

/// Dense oracle: reduces the full n₂×n₂ pencil with a Cholesky factor of N2
/// and takes the m-th largest eigenvalue.
pub fn pencil_dense(c2: &SparseMatrix, n1: &SparseMatrix, n2: &SparseMatrix, h2: f64) -> Result<InfSupEstimate> {
    let d = check_dims(c2, n1, n2, h2)?;
    let (m, n) = (c2.nrows(), c2.ncols());
    require_rank(m, n)?;
    let mut s = Mat::<f64>::zeros(n, n);
    for i in 0..m {
        let row: Vec<(usize, f64)> = c2.row(i).collect();
        for &(a, va) in &row {
            for &(b, vb) in &row {
                s[(a, b)] += va * vb / d[i];
            }
        }
    }
    let l = dense_lower_factor(n2)?;
    // L⁻¹ S L⁻ᵀ = L⁻¹ (L⁻¹ S)ᵀ for symmetric S
    l.solve_lower_triangular_in_place(s.as_mut());
    let mut t = s.transpose().to_owned();
    l.solve_lower_triangular_in_place(t.as_mut());
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (t[(i, j)] + t[(j, i)]));
    let eig = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| FdError::EigenFailure(format!("{e:?}")))?;
    Ok(InfSupEstimate::from_sigma(eig[n - m]))
}

/// Second oracle: `γ` as the smallest singular value of `L⁻¹ C2ᵀ D^{-1/2}`
/// with `N2 = L Lᵀ`.
pub fn pencil_svd(c2: &SparseMatrix, n1: &SparseMatrix, n2: &SparseMatrix, h2: f64) -> Result<InfSupEstimate> {
    let d = check_dims(c2, n1, n2, h2)?;
    let (m, n) = (c2.nrows(), c2.ncols());
    require_rank(m, n)?;
    let mut b = Mat::<f64>::zeros(n, m);
    for (i, k, v) in c2.triplets() {
        b[(k, i)] = v / d[i].sqrt();
    }
    let l = dense_lower_factor(n2)?;
    l.solve_lower_triangular_in_place(b.as_mut());
    let sv = b
        .singular_values()
        .map_err(|e| FdError::EigenFailure(format!("{e:?}")))?;
    let gamma = sv[m - 1];
    Ok(InfSupEstimate {
        sigma_min: gamma * gamma,
        gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfSupLevel {
    pub level: usize,
    pub h2: f64,
    pub dim_v2h: usize,
    pub dim_lh: usize,
    pub sigma_min: f64,
    pub gamma_est: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Degenerating,
    /// The finest estimate is exactly zero.
    Singular,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfSupReport {
    pub element: String,
    pub levels: Vec<InfSupLevel>,
}

impl InfSupReport {
    /// `γ(finest) / γ(coarsest)`
    pub fn decay_ratio(&self) -> f64 {
        match (self.levels.first(), self.levels.last()) {
            (Some(a), Some(b)) => b.gamma_est / a.gamma_est,
            _ => f64::NAN,
        }
    }

    pub fn is_monotone_decreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].gamma_est < w[0].gamma_est)
    }

    /// Stable when the finest estimate keeps half of the coarsest one;
    /// degenerating when it decays monotonically below that. Needs four or
    /// more levels.
    pub fn verdict(&self) -> Verdict {
        if self.levels.len() < 4 {
            return Verdict::Inconclusive;
        }
        if self.levels.last().is_some_and(|l| l.gamma_est == 0.0) {
            return Verdict::Singular;
        }
        let r = self.decay_ratio();
        if r >= 0.5 {
            Verdict::Stable
        } else if self.is_monotone_decreasing() {
            Verdict::Degenerating
        } else {
            Verdict::Inconclusive
        }
    }

    /// CSV with `header` emitted as `#`-prefixed comment lines.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("level,h2,dim_V2h,dim_Lh,sigma_min,gamma_est\n");
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{},{:.12e},{},{},{:.12e},{:.12e}",
                l.level, l.h2, l.dim_v2h, l.dim_lh, l.sigma_min, l.gamma_est
            );
        }
        out
    }

    /// Log-log table of `γ` against `h2` with level-to-level slopes.
    pub fn log_table(&self) -> String {
        let mut out = format!("{:>5} {:>12} {:>12} {:>8}\n", "level", "log10 h2", "log10 gamma", "slope");
        let mut prev: Option<&InfSupLevel> = None;
        for l in &self.levels {
            let slope = prev
                .map(|p| (l.gamma_est / p.gamma_est).ln() / (l.h2 / p.h2).ln())
                .map_or_else(|| "-".to_string(), |s| format!("{s:.3}"));
            let _ = writeln!(
                out,
                "{:>5} {:>12.5} {:>12.5} {:>8}",
                l.level,
                l.h2.log10(),
                l.gamma_est.log10(),
                slope
            );
            prev = Some(l);
        }
        out
    }
}
