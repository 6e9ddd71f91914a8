//! Error norms against exact solutions and finer-level references, and
//! multiplier diagnostics.

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::CouplingTable;
use crate::element::{collapsed_triangle, gauss_square};
use crate::error::{FdError, Result};
use crate::geometry::Point2;
use crate::mesh::{CellIndex, QuadMesh};
use crate::space::FeSpace;

/// Gauss points per direction for error integrals (two orders above assembly).
pub const ERROR_POINTS: usize = 5;

/// Collapsed-rule points on fragment triangles; exact to total degree 8.
pub const FRAGMENT_ERROR_POINTS: usize = 5;

/// A scalar field with its gradient.
#[derive(Clone, Copy)]
pub struct ExactField<'a> {
    pub value: &'a (dyn Fn(Point2) -> f64 + Sync),
    pub grad: &'a (dyn Fn(Point2) -> [f64; 2] + Sync),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub l2_u: f64,
    /// `|u_h - u|_1` (seminorm).
    pub h1_u: f64,
    pub l2_u2: f64,
    /// `‖u2_h - u2‖_1` (full norm).
    pub h1_u2: f64,
}

/// Squared L2 and H1-seminorm contributions of one point.
fn pointwise(space: &FeSpace, coeffs: &[f64], cell: usize, q: Point2, exact: &ExactField, x: Point2) -> (f64, f64) {
    let (v, g) = space.eval_with_grad(coeffs, cell, q);
    let e = v - (exact.value)(x);
    let eg = (exact.grad)(x);
    (e * e, (g[0] - eg[0]).powi(2) + (g[1] - eg[1]).powi(2))
}

/// `(‖u_h - u‖²_0, |u_h - u|²_1)` over the whole mesh of `space`.
pub fn squared_field_error(space: &FeSpace, coeffs: &[f64], exact: &ExactField) -> (f64, f64) {
    let rule = gauss_square(ERROR_POINTS).expect("supported rule");
    let mesh = space.mesh();
    let parts: Vec<(f64, f64)> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = mesh.cell_map(c);
            let mut acc = (0.0, 0.0);
            for (q, w) in rule.iter() {
                let jw = w * map.det(q);
                let (l2, h1) = pointwise(space, coeffs, c, q, exact, map.map(q));
                acc.0 += jw * l2;
                acc.1 += jw * h1;
            }
            acc
        })
        .collect();
    parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// `(‖u_h - u‖_0, |u_h - u|_1)`
pub fn field_error(space: &FeSpace, coeffs: &[f64], exact: &ExactField) -> (f64, f64) {
    let (l2, h1) = squared_field_error(space, coeffs, exact);
    (l2.sqrt(), h1.sqrt())
}

/// Errors of `(u_h, u2_h)` when the exact background solution is `outer` on
/// `Ω \ Ω2` and `inner` on `Ω2`, with `Ω2` taken as the union of the coupling
/// fragments.
///
/// The background error is integrated against `outer` cell by cell; on
/// fragments the `outer` contribution is replaced by the `inner` one.
pub fn error_norms(
    vh: &FeSpace,
    u: &[f64],
    v2: &FeSpace,
    u2: &[f64],
    coupling: &CouplingTable,
    outer: &ExactField,
    inner: &ExactField,
) -> ErrorNorms {
    let (mut l2_u, mut h1_u) = squared_field_error(vh, u, outer);
    let rule = collapsed_triangle(FRAGMENT_ERROR_POINTS);
    let fine = coupling.with_rule(&rule);
    let corr: Vec<(f64, f64)> = fine
        .cells
        .par_iter()
        .map(|frags| {
            let mut acc = (0.0, 0.0);
            for f in frags {
                let map = vh.mesh().cell_map(f.background_cell);
                for (&x, &w) in f.points.iter().zip(&f.weights) {
                    let q = map.inverse(x);
                    let (ol2, oh1) = pointwise(vh, u, f.background_cell, q, outer, x);
                    let (il2, ih1) = pointwise(vh, u, f.background_cell, q, inner, x);
                    acc.0 += w * (il2 - ol2);
                    acc.1 += w * (ih1 - oh1);
                }
            }
            acc
        })
        .collect();
    for (a, b) in corr {
        l2_u += a;
        h1_u += b;
    }
    let (l2_u2, semi_u2) = squared_field_error(v2, u2, inner);
    ErrorNorms {
        l2_u: l2_u.max(0.0).sqrt(),
        h1_u: h1_u.max(0.0).sqrt(),
        l2_u2: l2_u2.sqrt(),
        h1_u2: (l2_u2 + semi_u2).sqrt(),
    }
}

/// `(‖u_c - u_f‖²_0, |u_c - u_f|²_1)` integrated on the fine mesh, with the
/// coarse function evaluated by point location. Where the fine mesh pokes out
/// of a coarse curved boundary the nearest coarse cell is extrapolated.
pub fn squared_self_error(coarse: &FeSpace, uc: &[f64], fine: &FeSpace, uf: &[f64]) -> Result<(f64, f64)> {
    let rule = gauss_square(ERROR_POINTS)?;
    let index = CellIndex::new(coarse.mesh());
    let mesh = fine.mesh();
    let parts: Vec<Result<(f64, f64)>> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = mesh.cell_map(c);
            let mut acc = (0.0, 0.0);
            for (q, w) in rule.iter() {
                let x = map.map(q);
                let (cc, qc) = index.locate_or_nearest(coarse.mesh(), x);
                let (vf, gf) = fine.eval_with_grad(uf, c, q);
                let (vc, gc) = coarse.eval_with_grad(uc, cc, qc);
                let jw = w * map.det(q);
                acc.0 += jw * (vf - vc).powi(2);
                acc.1 += jw * ((gf[0] - gc[0]).powi(2) + (gf[1] - gc[1]).powi(2));
            }
            Ok(acc)
        })
        .collect();
    let mut total = (0.0, 0.0);
    for p in parts {
        let p = p?;
        total.0 += p.0;
        total.1 += p.1;
    }
    Ok(total)
}

/// Self-convergence errors of a coarse solution against a finer one.
pub fn self_convergence_norms(
    coarse: (&FeSpace, &[f64], &FeSpace, &[f64]),
    fine: (&FeSpace, &[f64], &FeSpace, &[f64]),
) -> Result<ErrorNorms> {
    let (l2_u, h1_u) = squared_self_error(coarse.0, coarse.1, fine.0, fine.1)?;
    let (l2_u2, semi_u2) = squared_self_error(coarse.2, coarse.3, fine.2, fine.3)?;
    Ok(ErrorNorms {
        l2_u: l2_u.sqrt(),
        h1_u: h1_u.sqrt(),
        l2_u2: l2_u2.sqrt(),
        h1_u2: (l2_u2 + semi_u2).sqrt(),
    })
}

/// `Σ_i λ_i |K_i|`, the multiplier tested against the constant 1.
pub fn multiplier_integral(lambda: &[f64], t2: &QuadMesh) -> f64 {
    lambda
        .iter()
        .zip(t2.cell_areas())
        .map(|(l, a)| l * a)
        .sum()
}

/// Area-weighted averages of a fine P0 field over the cells of `coarse`,
/// assigning each fine cell to the coarse cell containing its centroid.
pub fn project_p0(values: &[f64], fine: &QuadMesh, coarse: &QuadMesh) -> Result<Vec<f64>> {
    if values.len() != fine.num_cells() {
        return Err(FdError::DimensionMismatch(format!(
            "{} multiplier values for {} cells",
            values.len(),
            fine.num_cells()
        )));
    }
    let index = CellIndex::new(coarse);
    let mut sum = vec![0.0; coarse.num_cells()];
    let mut area = vec![0.0; coarse.num_cells()];
    let mut single: Vec<Option<f64>> = vec![None; coarse.num_cells()];
    let mut count = vec![0usize; coarse.num_cells()];
    for (c, &v) in values.iter().enumerate() {
        let x = fine.cell_centroid(c);
        // centroids just outside a coarse curved boundary go to the nearest cell
        let (cc, _) = index.locate_or_nearest(coarse, x);
        let a = fine.cell_area(c);
        sum[cc] += a * v;
        area[cc] += a;
        count[cc] += 1;
        single[cc] = Some(v);
    }
    sum.iter()
        .zip(&area)
        .enumerate()
        .map(|(c, (s, a))| {
            if count[c] == 1 {
                // same cell on both meshes: avoid the a·v/a rounding
                Ok(single[c].unwrap())
            } else if *a > 0.0 {
                Ok(s / a)
            } else {
                Err(FdError::DimensionMismatch(format!(
                    "coarse cell {c} received no fine cells"
                )))
            }
        })
        .collect()
}

/// `h2 · ‖λ_h - Π λ_ref‖_0` on the coarse immersed mesh, where `Π` averages
/// the reference multiplier onto coarse cells.
pub fn multiplier_error(lambda_h: &[f64], t2: &QuadMesh, lambda_ref: &[f64], t2_ref: &QuadMesh) -> Result<f64> {
    if lambda_h.len() != t2.num_cells() {
        return Err(FdError::DimensionMismatch(format!(
            "{} multiplier values for {} cells",
            lambda_h.len(),
            t2.num_cells()
        )));
    }
    let projected = project_p0(lambda_ref, t2_ref, t2)?;
    let sq: f64 = lambda_h
        .iter()
        .zip(&projected)
        .zip(t2.cell_areas())
        .map(|((a, b), area)| (a - b).powi(2) * area)
        .sum();
    Ok(t2.h * sq.sqrt())
}
