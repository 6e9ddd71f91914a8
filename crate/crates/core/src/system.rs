//! Assembly and direct solution of the block saddle-point system
//!
//! ```text
//! [ A1   0    C1ᵀ ] [u ]   [F1]
//! [ 0    A2  -C2ᵀ ] [u2] = [F2]
//! [ C1  -C2   0   ] [λ ]   [g ]
//! ```
//!
//! with `A1 = β K(Vh)`, `A2 = (β2 - β) K(V2h)`, `F1 = ∫ f ψ`,
//! `F2 = ∫ (f2 - f) φ`, and `g = 0` before boundary lifting.

use rayon::prelude::*;

use crate::coupling::{assemble_c1, assemble_c2, CouplingTable};
use crate::element::{self, gauss_square, CellMap, MAX_LOCAL_DOFS};
use crate::error::{FdError, Result};
use crate::geometry::Point2;
use crate::solver::{relative_residual, LuSolver};
use crate::space::{apply_dirichlet, DirichletBC, FeSpace};
use crate::sparse::{norm_inf, SparseMatrix};

/// Gauss points per direction for stiffness, mass and load integrals.
pub const ASSEMBLY_POINTS: usize = 3;

/// Relative residual every accepted solve must reach.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Scalar source term, shared across rayon workers.
pub type Source<'a> = &'a (dyn Fn(Point2) -> f64 + Sync);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub beta: f64,
    pub beta2: f64,
}

impl Coefficients {
    pub fn new(beta: f64, beta2: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(FdError::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        if !(beta2 > 0.0 && beta2.is_finite()) {
            return Err(FdError::InvalidParameter(format!("beta2 must be positive, got {beta2}")));
        }
        Ok(Self { beta, beta2 })
    }
}

fn assemble_cellwise<F>(space: &FeSpace, local: F) -> SparseMatrix
where
    F: Fn(usize, &mut [[f64; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS]) + Sync,
{
    let mesh = space.mesh();
    let trip: Vec<Vec<(usize, usize, f64)>> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let mut k = [[0.0; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];
            local(c, &mut k);
            let dofs = space.cell_dofs(c);
            let mut t = Vec::with_capacity(dofs.len() * dofs.len());
            for (a, &i) in dofs.iter().enumerate() {
                for (b, &j) in dofs.iter().enumerate() {
                    t.push((i, j, k[a][b]));
                }
            }
            t
        })
        .collect();
    SparseMatrix::from_triplets(space.ndofs(), space.ndofs(), trip.into_iter().flatten().collect())
}

/// `coef · ∫ ∇φ_i · ∇φ_j`
pub fn stiffness(space: &FeSpace, coef: f64) -> SparseMatrix {
    let rule = gauss_square(ASSEMBLY_POINTS).expect("supported rule");
    let family = space.family();
    let n = family.ndofs();
    assemble_cellwise(space, |c, k| {
        let map = space.mesh().cell_map(c);
        let mut g = [[0.0; 2]; MAX_LOCAL_DOFS];
        for (q, w) in rule.iter() {
            let jac = map.jacobian(q);
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            element::basis_grads(family, q, &mut g);
            let pg: Vec<[f64; 2]> = g[..n].iter().map(|&r| CellMap::physical_grad(&jac, det, r)).collect();
            let jw = coef * w * det;
            for a in 0..n {
                for b in 0..n {
                    k[a][b] += jw * (pg[a][0] * pg[b][0] + pg[a][1] * pg[b][1]);
                }
            }
        }
    })
}

/// `∫ φ_i φ_j`
pub fn mass(space: &FeSpace) -> SparseMatrix {
    let rule = gauss_square(ASSEMBLY_POINTS).expect("supported rule");
    let family = space.family();
    let n = family.ndofs();
    assemble_cellwise(space, |c, k| {
        let map = space.mesh().cell_map(c);
        let mut phi = [0.0; MAX_LOCAL_DOFS];
        for (q, w) in rule.iter() {
            let jw = w * map.det(q);
            element::basis_values(family, q, &mut phi);
            for a in 0..n {
                for b in 0..n {
                    k[a][b] += jw * phi[a] * phi[b];
                }
            }
        }
    })
}

/// `∫ f φ_i`
pub fn load(space: &FeSpace, f: Source) -> Vec<f64> {
    let rule = gauss_square(ASSEMBLY_POINTS).expect("supported rule");
    let family = space.family();
    let mesh = space.mesh();
    let per_cell: Vec<[f64; MAX_LOCAL_DOFS]> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = mesh.cell_map(c);
            let mut phi = [0.0; MAX_LOCAL_DOFS];
            let mut local = [0.0; MAX_LOCAL_DOFS];
            for (q, w) in rule.iter() {
                let jw = w * map.det(q) * f(map.map(q));
                element::basis_values(family, q, &mut phi);
                for a in 0..family.ndofs() {
                    local[a] += jw * phi[a];
                }
            }
            local
        })
        .collect();
    let mut out = vec![0.0; space.ndofs()];
    for (c, local) in per_cell.iter().enumerate() {
        for (a, &d) in space.cell_dofs(c).iter().enumerate() {
            out[d] += local[a];
        }
    }
    out
}

pub fn assemble_a1(vh: &FeSpace, coeffs: &Coefficients) -> Result<SparseMatrix> {
    if !(coeffs.beta > 0.0) {
        return Err(FdError::InvalidParameter(format!("beta must be positive, got {}", coeffs.beta)));
    }
    Ok(stiffness(vh, coeffs.beta))
}

/// `(β2 - β) K(V2h)`; indefinite when `β2 < β`, identically zero when equal.
pub fn assemble_a2(v2: &FeSpace, coeffs: &Coefficients) -> SparseMatrix {
    stiffness(v2, coeffs.beta2 - coeffs.beta)
}

/// The four blocks and right-hand sides, before boundary conditions.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub a1: SparseMatrix,
    pub a2: SparseMatrix,
    pub c1: SparseMatrix,
    pub c2: SparseMatrix,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub g: Vec<f64>,
}

/// Problem data on the two meshes.
pub struct SystemInput<'a> {
    pub vh: &'a FeSpace,
    pub v2: &'a FeSpace,
    pub lambda: &'a FeSpace,
    pub coupling: &'a CouplingTable,
    pub coeffs: Coefficients,
    pub f: Source<'a>,
    pub f2: Source<'a>,
}

pub fn assemble_system(input: &SystemInput) -> Result<BlockSystem> {
    let a1 = assemble_a1(input.vh, &input.coeffs)?;
    let a2 = assemble_a2(input.v2, &input.coeffs);
    let c1 = assemble_c1(input.coupling, input.lambda, input.vh)?;
    let c2 = assemble_c2(input.lambda, input.v2)?;
    let f1 = load(input.vh, input.f);
    let (f, f2) = (input.f, input.f2);
    let diff = move |p: Point2| f2(p) - f(p);
    let f2v = load(input.v2, &diff);
    let m = c1.nrows();
    Ok(BlockSystem {
        a1,
        a2,
        c1,
        c2,
        f1,
        f2: f2v,
        g: vec![0.0; m],
    })
}

impl BlockSystem {
    /// `(n, n2, m)`: background, immersed and multiplier dof counts.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.a1.nrows(), self.a2.nrows(), self.c1.nrows())
    }

    /// The full symmetric block matrix.
    pub fn matrix(&self) -> Result<SparseMatrix> {
        let (n, n2, m) = self.sizes();
        let c1t = self.c1.transpose();
        let neg_c2 = self.c2.scaled(-1.0);
        let neg_c2t = neg_c2.transpose();
        SparseMatrix::block(
            &[
                vec![Some(&self.a1), None, Some(&c1t)],
                vec![None, Some(&self.a2), Some(&neg_c2t)],
                vec![Some(&self.c1), Some(&neg_c2), None],
            ],
            &[n, n2, m],
            &[n, n2, m],
        )
    }

    pub fn rhs(&self) -> Vec<f64> {
        let mut b = self.f1.clone();
        b.extend_from_slice(&self.f2);
        b.extend_from_slice(&self.g);
        b
    }

    /// Splits a stacked vector into `(u, u2, λ)`.
    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, n2, _) = self.sizes();
        (x[..n].to_vec(), x[n..n + n2].to_vec(), x[n + n2..].to_vec())
    }

    /// `‖C1 u - C2 u2 - g‖∞`
    pub fn constraint_residual(&self, u: &[f64], u2: &[f64]) -> f64 {
        let a = self.c1.mul_vec(u);
        let b = self.c2.mul_vec(u2);
        let r: Vec<f64> = a.iter().zip(&b).zip(&self.g).map(|((x, y), g)| x - y - g).collect();
        norm_inf(&r)
    }
}

#[derive(Debug, Clone)]
pub struct SolutionTriple {
    pub u: Vec<f64>,
    pub u2: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `‖b - K x‖₂ / ‖b‖₂` of the constrained system actually solved.
    pub relative_residual: f64,
    /// `‖C1 u - C2 u2‖∞` measured with the unconstrained coupling blocks.
    pub constraint_residual: f64,
}

/// Applies `bc`, solves the block system directly, and checks the result.
pub fn solve_saddle(system: &BlockSystem, bc: &DirichletBC) -> Result<SolutionTriple> {
    solve_saddle_with(system, bc, RESIDUAL_TOLERANCE)
}

/// [`solve_saddle`] with an explicit bound on the relative residual.
pub fn solve_saddle_with(system: &BlockSystem, bc: &DirichletBC, tolerance: f64) -> Result<SolutionTriple> {
    let (n, n2, m) = system.sizes();
    if system.a2.max_abs() == 0.0 && n2 > m {
        // A2 = 0 leaves the kernel of C2 undetermined
        return Err(FdError::SingularSystem { n, n2, m });
    }
    let constrained = apply_dirichlet(system, bc)?;
    let k = constrained.matrix()?;
    let b = constrained.rhs();
    let x = LuSolver::new(&k)
        .and_then(|lu| lu.solve(&k, &b))
        .map_err(|_| FdError::SingularSystem { n, n2, m })?;
    let rel = relative_residual(&k, &x, &b);
    if !rel.is_finite() {
        return Err(FdError::SingularSystem { n, n2, m });
    }
    if rel > tolerance {
        return Err(FdError::ResidualTooLarge { residual: rel, tolerance });
    }
    let (u, u2, lambda) = system.split(&x);
    let constraint_residual = system.constraint_residual(&u, &u2);
    Ok(SolutionTriple {
        u,
        u2,
        lambda,
        relative_residual: rel,
        constraint_residual,
    })
}

/// Plain Dirichlet problem `-β Δu = f` on the background space.
pub fn solve_poisson(vh: &FeSpace, beta: f64, f: Source, bc: &DirichletBC) -> Result<Vec<f64>> {
    let a = stiffness(vh, beta);
    let b = load(vh, f);
    let empty = SparseMatrix::zeros(0, vh.ndofs());
    let sys = BlockSystem {
        a1: a,
        a2: SparseMatrix::zeros(0, 0),
        c1: empty.clone(),
        c2: SparseMatrix::zeros(0, 0),
        f1: b,
        f2: Vec::new(),
        g: Vec::new(),
    };
    let c = apply_dirichlet(&sys, bc)?;
    let lu = LuSolver::new(&c.a1)?;
    lu.solve(&c.a1, &c.f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::ElementFamily;
    use crate::mesh::{build_mesh, DomainKind, DomainSpec, QuadMesh};
    use crate::space::{build_space, interpolate};
    use std::sync::Arc;

    fn square(x0: f64, x1: f64, n: usize) -> Arc<QuadMesh> {
        Arc::new(
            build_mesh(
                &DomainSpec::new(
                    DomainKind::Rectangle {
                        min: Point2::new(x0, x0),
                        max: Point2::new(x1, x1),
                    },
                    n,
                ),
                0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn q1_stiffness_on_unit_square() {
        let s = build_space(square(0.0, 1.0, 1), ElementFamily::Q1);
        let k = stiffness(&s, 1.0);
        let d = s.cell_dofs(0);
        for i in 0..4 {
            assert!((k.at(d[i], d[i]) - 2.0 / 3.0).abs() < 1e-14);
            assert!((k.at(d[i], d[(i + 1) % 4]) + 1.0 / 6.0).abs() < 1e-14);
            assert!((k.at(d[i], d[(i + 2) % 4]) + 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_kills_constants_and_mass_integrates_one() {
        for fam in [ElementFamily::Q1, ElementFamily::Q1B, ElementFamily::Q2] {
            let s = build_space(square(0.0, 2.0, 3), fam);
            let k = stiffness(&s, 1.0);
            let ones = interpolate(&s, |_| 1.0);
            assert!(norm_inf(&k.mul_vec(&ones)) < 1e-13);
            assert!(k.max_asymmetry() < 1e-14);
            let m = mass(&s);
            let total: f64 = m.mul_vec(&ones).iter().zip(&ones).map(|(a, b)| a * b).sum();
            assert!((total - 4.0).abs() < 1e-13);
            let f = load(&s, &|_| 1.0);
            assert!((f.iter().zip(&ones).map(|(a, b)| a * b).sum::<f64>() - 4.0).abs() < 1e-13);
        }
    }

    #[test]
    fn poisson_reproduces_quadratic_with_q2() {
        // u = x² + y², -Δu = -4
        let s = build_space(square(0.0, 1.0, 4), ElementFamily::Q2);
        let exact = |p: Point2| p.x * p.x + p.y * p.y;
        let bc = DirichletBC::from_fn(&s, exact);
        let u = solve_poisson(&s, 1.0, &|_| -4.0, &bc).unwrap();
        for (d, p) in s.dof_coords().iter().enumerate() {
            assert!((u[d] - exact(*p)).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficients_are_validated() {
        assert!(Coefficients::new(0.0, 1.0).is_err());
        assert!(Coefficients::new(1.0, f64::NAN).is_err());
        assert!(Coefficients::new(1.0, 10.0).is_ok());
    }
}
