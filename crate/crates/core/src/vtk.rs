//! Legacy ASCII VTK output.

use std::fmt::Write as _;

use crate::coupling::CouplingTable;
use crate::error::{FdError, Result};
use crate::mesh::QuadMesh;

const VTK_QUAD: u8 = 9;
const VTK_POLYGON: u8 = 7;

fn header(out: &mut String, title: &str) {
    // the title is a single line of at most 256 characters
    let title: String = title.replace(['\n', '\r'], " ").chars().take(255).collect();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
}

fn scalars(out: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for v in values {
        let _ = writeln!(out, "{v:.12e}");
    }
}

/// Quad mesh with nodal point fields (one value per mesh node) and cell
/// fields.
pub fn mesh_vtk(mesh: &QuadMesh, title: &str, point_fields: &[(&str, &[f64])], cell_fields: &[(&str, &[f64])]) -> Result<String> {
    for (name, v) in point_fields {
        if v.len() < mesh.num_nodes() {
            return Err(FdError::DimensionMismatch(format!(
                "point field {name} has {} values for {} nodes",
                v.len(),
                mesh.num_nodes()
            )));
        }
    }
    for (name, v) in cell_fields {
        if v.len() != mesh.num_cells() {
            return Err(FdError::DimensionMismatch(format!(
                "cell field {name} has {} values for {} cells",
                v.len(),
                mesh.num_cells()
            )));
        }
    }
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, "POINTS {} double", mesh.num_nodes());
    for p in &mesh.nodes {
        let _ = writeln!(out, "{:.12e} {:.12e} 0", p.x, p.y);
    }
    let nc = mesh.num_cells();
    let _ = writeln!(out, "CELLS {nc} {}", 5 * nc);
    for c in &mesh.cells {
        let _ = writeln!(out, "4 {} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {nc}");
    for _ in 0..nc {
        let _ = writeln!(out, "{VTK_QUAD}");
    }
    if !point_fields.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", mesh.num_nodes());
        for (name, v) in point_fields {
            // nodal dofs come first in every continuous space
            scalars(&mut out, name, &v[..mesh.num_nodes()]);
        }
    }
    if !cell_fields.is_empty() {
        let _ = writeln!(out, "CELL_DATA {nc}");
        for (name, v) in cell_fields {
            scalars(&mut out, name, v);
        }
    }
    Ok(out)
}

/// Intersection fragments as polygons, tagged with their immersed and
/// background cells.
pub fn fragments_vtk(table: &CouplingTable, title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let frags: Vec<_> = table.fragments().collect();
    let npts: usize = frags.iter().map(|(_, f)| f.piece.len()).sum();
    let _ = writeln!(out, "POINTS {npts} double");
    for (_, f) in &frags {
        for p in f.piece.vertices() {
            let _ = writeln!(out, "{:.12e} {:.12e} 0", p.x, p.y);
        }
    }
    let _ = writeln!(out, "CELLS {} {}", frags.len(), frags.len() + npts);
    let mut next = 0;
    for (_, f) in &frags {
        let k = f.piece.len();
        let ids: Vec<String> = (next..next + k).map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{k} {}", ids.join(" "));
        next += k;
    }
    let _ = writeln!(out, "CELL_TYPES {}", frags.len());
    for _ in &frags {
        let _ = writeln!(out, "{VTK_POLYGON}");
    }
    let _ = writeln!(out, "CELL_DATA {}", frags.len());
    let _ = writeln!(out, "SCALARS immersed_cell int 1\nLOOKUP_TABLE default");
    for (i, _) in &frags {
        let _ = writeln!(out, "{i}");
    }
    let _ = writeln!(out, "SCALARS background_cell int 1\nLOOKUP_TABLE default");
    for (_, f) in &frags {
        let _ = writeln!(out, "{}", f.background_cell);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::build_intersections;
    use crate::geometry::Point2;
    use crate::mesh::{build_mesh, DomainKind, DomainSpec};

    fn grid(n: usize, x0: f64, x1: f64) -> QuadMesh {
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
        .unwrap()
    }

    #[test]
    fn quad_mesh_layout() {
        let m = grid(2, 0.0, 1.0);
        let u = vec![1.0; 9];
        let lam = vec![2.0; 4];
        let s = mesh_vtk(&m, "t\nitle", &[("u", &u)], &[("lambda", &lam)]).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[1], "t itle");
        assert!(s.contains("POINTS 9 double"));
        assert!(s.contains("CELLS 4 20"));
        assert!(s.contains("CELL_TYPES 4\n9\n9\n9\n9\n"));
        assert!(s.contains("POINT_DATA 9\nSCALARS u double 1"));
        assert!(s.contains("CELL_DATA 4\nSCALARS lambda double 1"));
        assert!(mesh_vtk(&m, "x", &[], &[("l", &u)]).is_err());
    }

    #[test]
    fn fragment_polygons() {
        let t2 = grid(1, 0.0, 1.0);
        let t = grid(2, -0.5, 1.5);
        let table = build_intersections(&t2, &t).unwrap();
        let s = fragments_vtk(&table, "frags");
        assert!(s.contains("POINTS 16 double"));
        assert!(s.contains("CELLS 4 20"));
        assert!(s.contains("CELL_TYPES 4\n7\n"));
    }
}
