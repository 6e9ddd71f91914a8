//! Global finite element spaces: dof numbering, interpolation, evaluation
//! and Dirichlet constraints.
//!
//! Global numbering is nodal dofs first (in mesh node order), then Q2 edge
//! dofs (in order of first appearance while walking cells), then cell-local
//! dofs (Q2 centers, bubbles, P0 constants) in cell order.

use std::collections::HashMap;
use std::sync::Arc;

use crate::element::{self, ElementFamily, MAX_LOCAL_DOFS};
use crate::error::{FdError, Result};
use crate::geometry::Point2;
use crate::mesh::{edge_incidence, QuadMesh};
use crate::sparse::SparseMatrix;
use crate::system::BlockSystem;

#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Arc<QuadMesh>,
    family: ElementFamily,
    cell_dofs: Vec<usize>,
    ndofs: usize,
    dof_coords: Vec<Point2>,
    boundary_dofs: Vec<usize>,
}

/// Builds the global space of `family` on `mesh`.
pub fn build_space(mesh: Arc<QuadMesh>, family: ElementFamily) -> FeSpace {
    let nloc = family.ndofs();
    let ncells = mesh.num_cells();
    let nnodes = mesh.num_nodes();
    let mut cell_dofs = vec![0usize; ncells * nloc];
    let mut dof_coords = Vec::new();
    let mut boundary_dofs = Vec::new();

    match family {
        ElementFamily::P0 => {
            for c in 0..ncells {
                cell_dofs[c] = c;
                dof_coords.push(mesh.cell_centroid(c));
            }
        }
        ElementFamily::Q1 | ElementFamily::Q1B => {
            dof_coords.extend_from_slice(&mesh.nodes);
            boundary_dofs.extend_from_slice(&mesh.boundary_nodes);
            for (c, cell) in mesh.cells.iter().enumerate() {
                cell_dofs[c * nloc..c * nloc + 4].copy_from_slice(cell);
                if family == ElementFamily::Q1B {
                    cell_dofs[c * nloc + 4] = nnodes + c;
                }
            }
            if family == ElementFamily::Q1B {
                dof_coords.extend((0..ncells).map(|c| mesh.cell_centroid(c)));
            }
        }
        ElementFamily::Q2 => {
            dof_coords.extend_from_slice(&mesh.nodes);
            boundary_dofs.extend_from_slice(&mesh.boundary_nodes);
            let incidence = edge_incidence(&mesh.cells);
            let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::with_capacity(incidence.len());
            let mut edge_list: Vec<(usize, usize)> = Vec::with_capacity(incidence.len());
            for (c, cell) in mesh.cells.iter().enumerate() {
                let base = c * nloc;
                cell_dofs[base..base + 4].copy_from_slice(cell);
                for k in 0..4 {
                    let (a, b) = (cell[k], cell[(k + 1) % 4]);
                    let key = (a.min(b), a.max(b));
                    let id = *edge_ids.entry(key).or_insert_with(|| {
                        edge_list.push(key);
                        edge_list.len() - 1
                    });
                    cell_dofs[base + 4 + k] = nnodes + id;
                }
            }
            let nedges = edge_list.len();
            for (id, &(a, b)) in edge_list.iter().enumerate() {
                dof_coords.push((mesh.nodes[a] + mesh.nodes[b]) * 0.5);
                if incidence[&(a, b)] == 1 {
                    boundary_dofs.push(nnodes + id);
                }
            }
            for c in 0..ncells {
                cell_dofs[c * nloc + 8] = nnodes + nedges + c;
                dof_coords.push(mesh.cell_centroid(c));
            }
        }
    }
    boundary_dofs.sort_unstable();
    FeSpace {
        ndofs: dof_coords.len(),
        mesh,
        family,
        cell_dofs,
        dof_coords,
        boundary_dofs,
    }
}

impl FeSpace {
    pub fn mesh(&self) -> &QuadMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<QuadMesh> {
        &self.mesh
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn ndofs(&self) -> usize {
        self.ndofs
    }

    pub fn dof_coords(&self) -> &[Point2] {
        &self.dof_coords
    }

    /// Global dofs of a cell in local order.
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let n = self.family.ndofs();
        &self.cell_dofs[cell * n..(cell + 1) * n]
    }

    /// Dofs on the outer boundary of the mesh (nodal dofs only).
    pub fn boundary_dofs(&self) -> &[usize] {
        &self.boundary_dofs
    }

    /// Whether dof `d` carries a point value (vertex, edge midpoint or Q2
    /// center) rather than a bubble amplitude or cell constant.
    pub fn is_nodal(&self, d: usize) -> bool {
        match self.family {
            ElementFamily::P0 => false,
            ElementFamily::Q1 | ElementFamily::Q2 => true,
            ElementFamily::Q1B => d < self.mesh.num_nodes(),
        }
    }

    /// Value of the finite element function at reference point `p` of `cell`.
    pub fn eval(&self, coeffs: &[f64], cell: usize, p: Point2) -> f64 {
        let mut phi = [0.0; MAX_LOCAL_DOFS];
        element::basis_values(self.family, p, &mut phi);
        self.cell_dofs(cell)
            .iter()
            .zip(phi)
            .map(|(&d, v)| coeffs[d] * v)
            .sum()
    }

    /// Value and physical gradient at reference point `p` of `cell`.
    pub fn eval_with_grad(&self, coeffs: &[f64], cell: usize, p: Point2) -> (f64, [f64; 2]) {
        let map = self.mesh.cell_map(cell);
        let jac = map.jacobian(p);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let mut phi = [0.0; MAX_LOCAL_DOFS];
        let mut grads = [[0.0; 2]; MAX_LOCAL_DOFS];
        element::basis_values(self.family, p, &mut phi);
        element::basis_grads(self.family, p, &mut grads);
        let mut value = 0.0;
        let mut g = [0.0; 2];
        for (k, &d) in self.cell_dofs(cell).iter().enumerate() {
            value += coeffs[d] * phi[k];
            let pg = crate::element::CellMap::physical_grad(&jac, det, grads[k]);
            g[0] += coeffs[d] * pg[0];
            g[1] += coeffs[d] * pg[1];
        }
        (value, g)
    }
}

/// Nodal interpolant of `g`: point values at nodal dofs, zero bubble
/// amplitudes, cell-centroid values for P0.
pub fn interpolate(space: &FeSpace, g: impl Fn(Point2) -> f64) -> Vec<f64> {
    (0..space.ndofs())
        .map(|d| match space.family {
            ElementFamily::Q1B if !space.is_nodal(d) => 0.0,
            _ => g(space.dof_coords[d]),
        })
        .collect()
}

/// Essential constraints `u[dofs[k]] = values[k]` on the background space.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletBC {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl DirichletBC {
    /// `u = 0` on the outer boundary.
    pub fn homogeneous(space: &FeSpace) -> Self {
        let dofs = space.boundary_dofs().to_vec();
        let values = vec![0.0; dofs.len()];
        Self { dofs, values }
    }

    /// `u = g` at the boundary dof positions.
    pub fn from_fn(space: &FeSpace, g: impl Fn(Point2) -> f64) -> Self {
        let dofs = space.boundary_dofs().to_vec();
        let values = dofs.iter().map(|&d| g(space.dof_coords()[d])).collect();
        Self { dofs, values }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Symmetric elimination of the constrained background dofs.
///
/// Constrained rows and columns of `A1` become identity rows/columns and the
/// matching columns of `C1` are zeroed; the known values are moved to the
/// right-hand sides (including the constraint row right-hand side `g`), so
/// the full block matrix stays symmetric.
pub fn apply_dirichlet(system: &BlockSystem, bc: &DirichletBC) -> Result<BlockSystem> {
    let n = system.a1.nrows();
    let mut value = vec![None; n];
    for (&d, &v) in bc.dofs.iter().zip(&bc.values) {
        if d >= n {
            return Err(FdError::IndexOutOfRange {
                what: "dirichlet dof",
                index: d,
                len: n,
            });
        }
        value[d] = Some(v);
    }
    let mut out = system.clone();

    // lift known values into the right-hand sides
    for i in 0..n {
        if value[i].is_some() {
            continue;
        }
        let lift: f64 = system
            .a1
            .row(i)
            .filter_map(|(j, a)| value[j].map(|g| a * g))
            .sum();
        out.f1[i] -= lift;
    }
    for k in 0..system.c1.nrows() {
        let lift: f64 = system
            .c1
            .row(k)
            .filter_map(|(j, c)| value[j].map(|g| c * g))
            .sum();
        out.g[k] -= lift;
    }

    let mut a1_trip: Vec<(usize, usize, f64)> = system
        .a1
        .triplets()
        .filter(|&(i, j, _)| value[i].is_none() && value[j].is_none())
        .collect();
    for (i, v) in value.iter().enumerate() {
        if let Some(g) = v {
            a1_trip.push((i, i, 1.0));
            out.f1[i] = *g;
        }
    }
    out.a1 = SparseMatrix::from_triplets(n, n, a1_trip);
    out.c1 = SparseMatrix::from_triplets(
        system.c1.nrows(),
        system.c1.ncols(),
        system
            .c1
            .triplets()
            .filter(|&(_, j, _)| value[j].is_none())
            .collect(),
    );
    Ok(out)
}
