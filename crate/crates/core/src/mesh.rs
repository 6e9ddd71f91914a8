//! Quadrilateral meshes for the background domain and the immersed domain.
//!
//! Polygonal domains are meshed as structured axis-aligned grids. The disk
//! uses a five-block layout (a central square plus four boundary-fitted
//! transfinite blocks), and the flower is the disk mesh pushed radially onto
//! the curve `ρ = R (1 + A cos(kθ))`. Uniform refinement splits every cell
//! into four and projects new boundary midpoints onto the exact curve.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use crate::element::CellMap;
use crate::error::{FdError, Result};
use crate::geometry::{BoundingBox, ConvexPolygon, Point2};

/// Exact description of a mesh's outer boundary, used to place new boundary
/// nodes during refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundaryCurve {
    Polygonal,
    Circle {
        center: Point2,
        radius: f64,
    },
    Flower {
        center: Point2,
        radius: f64,
        amplitude: f64,
        petals: u32,
    },
}

impl BoundaryCurve {
    /// Moves `p` along the ray from the center onto the curve.
    pub fn project(&self, p: Point2) -> Point2 {
        match *self {
            BoundaryCurve::Polygonal => p,
            BoundaryCurve::Circle { center, radius } => {
                let d = p - center;
                center + d * (radius / d.norm())
            }
            BoundaryCurve::Flower {
                center,
                radius,
                amplitude,
                petals,
            } => {
                let d = p - center;
                let r = radius * (1.0 + amplitude * (petals as f64 * d.angle()).cos());
                center + d * (r / d.norm())
            }
        }
    }

    /// Distance from `p` to the curve measured along the radial ray (zero for
    /// polygonal boundaries).
    pub fn radial_distance(&self, p: Point2) -> f64 {
        match self {
            BoundaryCurve::Polygonal => 0.0,
            _ => self.project(p).dist(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Rectangle {
        min: Point2,
        max: Point2,
    },
    SquarePatch {
        min: Point2,
        side: f64,
    },
    /// `[min, min + size]²` without its upper-right quadrant.
    Lshape {
        min: Point2,
        size: f64,
    },
    Disk {
        center: Point2,
        radius: f64,
    },
    Flower {
        center: Point2,
        radius: f64,
        amplitude: f64,
        petals: u32,
    },
}

/// A domain plus its level-0 resolution.
///
/// `base_cells` is the number of cells per side for rectangles and square
/// patches (the shorter side of a rectangle is scaled to keep cells square),
/// per half-side for the L-shape, and per block side for the disk and flower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub base_cells: usize,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, base_cells: usize) -> Self {
        Self { kind, base_cells }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(FdError::InvalidDomain(msg.to_string()));
        if self.base_cells == 0 {
            return bad("base_cells must be at least 1");
        }
        match self.kind {
            DomainKind::Rectangle { min, max } => {
                if !(min.is_finite() && max.is_finite()) || max.x <= min.x || max.y <= min.y {
                    return bad("rectangle must have max > min in both directions");
                }
            }
            DomainKind::SquarePatch { min, side } | DomainKind::Lshape { min, size: side } => {
                if !min.is_finite() || !(side > 0.0) || !side.is_finite() {
                    return bad("side length must be positive");
                }
            }
            DomainKind::Disk { center, radius } => {
                if !center.is_finite() || !(radius > 0.0) || !radius.is_finite() {
                    return bad("disk radius must be positive");
                }
            }
            DomainKind::Flower {
                center,
                radius,
                amplitude,
                petals,
            } => {
                if !center.is_finite() || !(radius > 0.0) || !radius.is_finite() {
                    return bad("flower radius must be positive");
                }
                if !(0.0..0.5).contains(&amplitude) || petals == 0 {
                    return bad("flower amplitude must lie in [0, 0.5) with at least one petal");
                }
            }
        }
        Ok(())
    }

    /// Exact area of the continuous domain.
    pub fn exact_area(&self) -> f64 {
        match self.kind {
            DomainKind::Rectangle { min, max } => (max.x - min.x) * (max.y - min.y),
            DomainKind::SquarePatch { side, .. } => side * side,
            DomainKind::Lshape { size, .. } => 0.75 * size * size,
            DomainKind::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
            DomainKind::Flower {
                radius, amplitude, ..
            } => std::f64::consts::PI * radius * radius * (1.0 + 0.5 * amplitude * amplitude),
        }
    }

    /// Whether `p` lies in the closed continuous domain.
    pub fn contains(&self, p: Point2) -> bool {
        match self.kind {
            DomainKind::Rectangle { min, max } => {
                p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y
            }
            DomainKind::SquarePatch { min, side } => {
                p.x >= min.x && p.x <= min.x + side && p.y >= min.y && p.y <= min.y + side
            }
            DomainKind::Lshape { min, size } => {
                let inside = p.x >= min.x && p.x <= min.x + size && p.y >= min.y && p.y <= min.y + size;
                let half = 0.5 * size;
                inside && !(p.x > min.x + half && p.y > min.y + half)
            }
            DomainKind::Disk { center, radius } => p.dist(center) <= radius,
            DomainKind::Flower {
                center,
                radius,
                amplitude,
                petals,
            } => {
                let d = p - center;
                d.norm() <= radius * (1.0 + amplitude * (petals as f64 * d.angle()).cos())
            }
        }
    }

    pub fn boundary_curve(&self) -> BoundaryCurve {
        match self.kind {
            DomainKind::Disk { center, radius } => BoundaryCurve::Circle { center, radius },
            DomainKind::Flower {
                center,
                radius,
                amplitude,
                petals,
            } => BoundaryCurve::Flower {
                center,
                radius,
                amplitude,
                petals,
            },
            _ => BoundaryCurve::Polygonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadMesh {
    pub nodes: Vec<Point2>,
    /// Counterclockwise node indices.
    pub cells: Vec<[usize; 4]>,
    /// Sorted indices of the nodes on the outer boundary.
    pub boundary_nodes: Vec<usize>,
    pub boundary: BoundaryCurve,
    /// Largest cell diagonal.
    pub h: f64,
}

/// Deduplicates nodes generated independently by neighbouring blocks.
struct NodeMerger {
    tol: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    nodes: Vec<Point2>,
}

impl NodeMerger {
    fn new(scale: f64) -> Self {
        Self {
            tol: 1e-10 * scale,
            buckets: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    fn key(&self, p: Point2) -> (i64, i64) {
        (
            (p.x / self.tol).floor() as i64,
            (p.y / self.tol).floor() as i64,
        )
    }

    fn insert(&mut self, p: Point2) -> usize {
        let (kx, ky) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for &id in ids {
                        if self.nodes[id].dist(p) <= self.tol {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.nodes.len();
        self.nodes.push(p);
        self.buckets.entry((kx, ky)).or_default().push(id);
        id
    }

    /// Adds an `nx × ny` structured block given an orientation-preserving map
    /// from [0, 1]².
    fn add_block(
        &mut self,
        nx: usize,
        ny: usize,
        map: impl Fn(f64, f64) -> Point2,
        cells: &mut Vec<[usize; 4]>,
    ) {
        let mut ids = vec![0usize; (nx + 1) * (ny + 1)];
        for j in 0..=ny {
            for i in 0..=nx {
                let p = map(i as f64 / nx as f64, j as f64 / ny as f64);
                ids[j * (nx + 1) + i] = self.insert(p);
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let a = ids[j * (nx + 1) + i];
                let b = ids[j * (nx + 1) + i + 1];
                let c = ids[(j + 1) * (nx + 1) + i + 1];
                let d = ids[(j + 1) * (nx + 1) + i];
                cells.push([a, b, c, d]);
            }
        }
    }
}

fn grid_block(min: Point2, max: Point2) -> impl Fn(f64, f64) -> Point2 {
    move |s, t| {
        Point2::new(
            min.x + s * (max.x - min.x),
            min.y + t * (max.y - min.y),
        )
    }
}

/// Edges keyed by sorted node pair, with the number of incident cells.
pub(crate) fn edge_incidence(cells: &[[usize; 4]]) -> HashMap<(usize, usize), usize> {
    let mut map = HashMap::with_capacity(cells.len() * 2);
    for c in cells {
        for k in 0..4 {
            let (a, b) = (c[k], c[(k + 1) % 4]);
            *map.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    map
}

fn boundary_from_topology(nnodes: usize, cells: &[[usize; 4]]) -> Vec<usize> {
    let mut on = vec![false; nnodes];
    for ((a, b), count) in edge_incidence(cells) {
        if count == 1 {
            on[a] = true;
            on[b] = true;
        }
    }
    (0..nnodes).filter(|&i| on[i]).collect()
}

fn max_diagonal(nodes: &[Point2], cells: &[[usize; 4]]) -> f64 {
    cells
        .iter()
        .map(|c| {
            nodes[c[0]]
                .dist(nodes[c[2]])
                .max(nodes[c[1]].dist(nodes[c[3]]))
        })
        .fold(0.0, f64::max)
}

impl QuadMesh {
    /// Assembles a mesh from raw parts, deriving boundary nodes and `h`.
    pub fn from_parts(nodes: Vec<Point2>, cells: Vec<[usize; 4]>, boundary: BoundaryCurve) -> Self {
        let boundary_nodes = boundary_from_topology(nodes.len(), &cells);
        let h = max_diagonal(&nodes, &cells);
        Self {
            nodes,
            cells,
            boundary_nodes,
            boundary,
            h,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_vertices(&self, cell: usize) -> [Point2; 4] {
        let c = self.cells[cell];
        [
            self.nodes[c[0]],
            self.nodes[c[1]],
            self.nodes[c[2]],
            self.nodes[c[3]],
        ]
    }

    pub fn cell_map(&self, cell: usize) -> CellMap {
        CellMap::new(self.cell_vertices(cell))
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        crate::geometry::signed_area(&self.cell_vertices(cell))
    }

    pub fn cell_areas(&self) -> Vec<f64> {
        (0..self.num_cells()).map(|c| self.cell_area(c)).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.cell_areas().iter().sum()
    }

    /// Vertex average of the cell (the image of the reference center).
    pub fn cell_centroid(&self, cell: usize) -> Point2 {
        let v = self.cell_vertices(cell);
        (v[0] + v[1] + v[2] + v[3]) * 0.25
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::of_points(&self.nodes)
    }

    /// Polygon of a cell without validation (used on hot paths).
    pub(crate) fn cell_polygon_unchecked(&self, cell: usize) -> ConvexPolygon {
        ConvexPolygon::from_vertices_unchecked(self.cell_vertices(cell).to_vec())
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        self.boundary_nodes.binary_search(&node).is_ok()
    }

    /// Translated copy (used to probe mesh-shift invariance).
    pub fn translated(&self, offset: Point2) -> QuadMesh {
        let mut m = self.clone();
        for p in &mut m.nodes {
            *p = *p + offset;
        }
        m.boundary = match m.boundary {
            BoundaryCurve::Polygonal => BoundaryCurve::Polygonal,
            BoundaryCurve::Circle { center, radius } => BoundaryCurve::Circle {
                center: center + offset,
                radius,
            },
            BoundaryCurve::Flower {
                center,
                radius,
                amplitude,
                petals,
            } => BoundaryCurve::Flower {
                center: center + offset,
                radius,
                amplitude,
                petals,
            },
        };
        m
    }

    /// Smallest over largest cell area.
    pub fn area_ratio(&self) -> f64 {
        let areas = self.cell_areas();
        let min = areas.iter().copied().fold(f64::INFINITY, f64::min);
        let max = areas.iter().copied().fold(0.0, f64::max);
        min / max
    }

    /// Checks orientation, convexity and boundary placement.
    pub fn validate(&self) -> Result<()> {
        for c in 0..self.num_cells() {
            let poly = self.cell_polygon_unchecked(c);
            if poly.signed_area() <= 0.0 {
                return Err(FdError::InvalidDomain(format!("cell {c} has nonpositive area")));
            }
            if !poly.is_convex() {
                return Err(FdError::InvalidDomain(format!("cell {c} is not convex")));
            }
        }
        let scale = {
            let bb = self.bounding_box();
            bb.width().max(bb.height())
        };
        for &n in &self.boundary_nodes {
            if self.boundary.radial_distance(self.nodes[n]) > 1e-10 * scale {
                return Err(FdError::InvalidDomain(format!(
                    "boundary node {n} is off the boundary curve"
                )));
            }
        }
        if !(self.h > 0.0) {
            return Err(FdError::InvalidDomain("mesh size must be positive".into()));
        }
        Ok(())
    }
}

/// Counterclockwise polygon of a cell.
pub fn cell_polygon(mesh: &QuadMesh, cell: usize) -> Result<ConvexPolygon> {
    if cell >= mesh.num_cells() {
        return Err(FdError::IndexOutOfRange {
            what: "cell",
            index: cell,
            len: mesh.num_cells(),
        });
    }
    ConvexPolygon::new(mesh.cell_vertices(cell).to_vec())
}

fn disk_mesh(center: Point2, radius: f64, n: usize) -> QuadMesh {
    let a = 0.5 * radius;
    let mut merger = NodeMerger::new(radius);
    let mut cells = Vec::with_capacity(5 * n * n);
    merger.add_block(
        n,
        n,
        grid_block(center + Point2::new(-a, -a), center + Point2::new(a, a)),
        &mut cells,
    );
    for k in 0..4 {
        let rot = k as f64 * FRAC_PI_2;
        let (sin, cos) = rot.sin_cos();
        let rotate = move |p: Point2| Point2::new(cos * p.x - sin * p.y, sin * p.x + cos * p.y);
        // east block before rotation: ξ runs radially outward, η counterclockwise
        merger.add_block(
            n,
            n,
            move |xi, eta| {
                let inner = Point2::new(a, -a + 2.0 * a * eta);
                let theta = -FRAC_PI_4 + eta * FRAC_PI_2;
                let outer = Point2::new(radius * theta.cos(), radius * theta.sin());
                center + rotate(inner * (1.0 - xi) + outer * xi)
            },
            &mut cells,
        );
    }
    let mut mesh = QuadMesh::from_parts(
        merger.nodes,
        cells,
        BoundaryCurve::Circle { center, radius },
    );
    // snap boundary nodes exactly onto the circle
    for &b in &mesh.boundary_nodes.clone() {
        mesh.nodes[b] = mesh.boundary.project(mesh.nodes[b]);
    }
    mesh
}

fn flower_map(disk: &QuadMesh, center: Point2, radius: f64, amplitude: f64, petals: u32) -> QuadMesh {
    let curve = BoundaryCurve::Flower {
        center,
        radius,
        amplitude,
        petals,
    };
    let nodes = disk
        .nodes
        .iter()
        .map(|&p| {
            let d = p - center;
            let scale = 1.0 + amplitude * (petals as f64 * d.angle()).cos();
            if d.norm() == 0.0 {
                p
            } else {
                center + d * scale
            }
        })
        .collect();
    let mut mesh = QuadMesh::from_parts(nodes, disk.cells.clone(), curve);
    for &b in &mesh.boundary_nodes.clone() {
        mesh.nodes[b] = curve.project(mesh.nodes[b]);
    }
    mesh
}

fn base_mesh(spec: &DomainSpec) -> QuadMesh {
    let n = spec.base_cells;
    match spec.kind {
        DomainKind::Rectangle { min, max } => {
            let (w, h) = (max.x - min.x, max.y - min.y);
            let (nx, ny) = if w >= h {
                (n, ((n as f64 * h / w).round() as usize).max(1))
            } else {
                (((n as f64 * w / h).round() as usize).max(1), n)
            };
            let mut merger = NodeMerger::new(w.max(h));
            let mut cells = Vec::with_capacity(nx * ny);
            merger.add_block(nx, ny, grid_block(min, max), &mut cells);
            QuadMesh::from_parts(merger.nodes, cells, BoundaryCurve::Polygonal)
        }
        DomainKind::SquarePatch { min, side } => {
            let mut merger = NodeMerger::new(side);
            let mut cells = Vec::with_capacity(n * n);
            let max = min + Point2::new(side, side);
            merger.add_block(n, n, grid_block(min, max), &mut cells);
            QuadMesh::from_parts(merger.nodes, cells, BoundaryCurve::Polygonal)
        }
        DomainKind::Lshape { min, size } => {
            let s = 0.5 * size;
            let mut merger = NodeMerger::new(size);
            let mut cells = Vec::with_capacity(3 * n * n);
            for (ox, oy) in [(0.0, 0.0), (s, 0.0), (0.0, s)] {
                let lo = min + Point2::new(ox, oy);
                merger.add_block(n, n, grid_block(lo, lo + Point2::new(s, s)), &mut cells);
            }
            QuadMesh::from_parts(merger.nodes, cells, BoundaryCurve::Polygonal)
        }
        DomainKind::Disk { center, radius } => disk_mesh(center, radius, n),
        DomainKind::Flower { .. } => unreachable!("flower meshes are mapped from refined disks"),
    }
}

/// Builds the level-`level` mesh of `spec`: polygonal domains are refined
/// uniformly `level` times, disks are resampled with `base_cells · 2^level`
/// cells per block edge.
pub fn build_mesh(spec: &DomainSpec, level: usize) -> Result<QuadMesh> {
    spec.validate()?;
    if let DomainKind::Flower {
        center,
        radius,
        amplitude,
        petals,
    } = spec.kind
    {
        let disk = build_mesh(
            &DomainSpec::new(DomainKind::Disk { center, radius }, spec.base_cells),
            level,
        )?;
        return Ok(flower_map(&disk, center, radius, amplitude, petals));
    }
    if let DomainKind::Disk { center, radius } = spec.kind {
        // resampling the block map keeps h halving closer to exact than
        // refining the straight-edged coarse mesh
        return Ok(disk_mesh(center, radius, spec.base_cells << level));
    }
    let mut mesh = base_mesh(spec);
    for _ in 0..level {
        mesh = refine_uniform(&mesh);
    }
    Ok(mesh)
}

/// Splits every cell into four through its edge midpoints and center. Child
/// cells of parent `c` are `4c..4c + 4`. Midpoints of boundary edges are
/// projected onto the boundary curve.
pub fn refine_uniform(m: &QuadMesh) -> QuadMesh {
    let incidence = edge_incidence(&m.cells);
    let mut nodes = m.nodes.clone();
    let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::with_capacity(incidence.len());
    let mut mid = |a: usize, b: usize, nodes: &mut Vec<Point2>| -> usize {
        let key = (a.min(b), a.max(b));
        *edge_mid.entry(key).or_insert_with(|| {
            let mut p = (nodes[a] + nodes[b]) * 0.5;
            if incidence[&key] == 1 {
                p = m.boundary.project(p);
            }
            nodes.push(p);
            nodes.len() - 1
        })
    };
    let mut cells = Vec::with_capacity(4 * m.cells.len());
    for c in &m.cells {
        let [a, b, cc, d] = *c;
        let mab = mid(a, b, &mut nodes);
        let mbc = mid(b, cc, &mut nodes);
        let mcd = mid(cc, d, &mut nodes);
        let mda = mid(d, a, &mut nodes);
        let center = (m.nodes[a] + m.nodes[b] + m.nodes[cc] + m.nodes[d]) * 0.25;
        nodes.push(center);
        let o = nodes.len() - 1;
        cells.push([a, mab, o, mda]);
        cells.push([mab, b, mbc, o]);
        cells.push([o, mbc, cc, mcd]);
        cells.push([mda, o, mcd, d]);
    }
    QuadMesh::from_parts(nodes, cells, m.boundary)
}

/// Uniform bucket grid over cell bounding boxes for candidate lookup and
/// point location.
#[derive(Debug, Clone)]
pub struct CellIndex {
    origin: Point2,
    cell_size: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
    cell_boxes: Vec<BoundingBox>,
}

impl CellIndex {
    pub fn new(mesh: &QuadMesh) -> Self {
        let bb = mesh.bounding_box();
        let n = mesh.num_cells().max(1);
        let cell_size = (bb.width() * bb.height() / n as f64).sqrt().max(1e-300);
        let nx = ((bb.width() / cell_size).ceil() as usize).max(1);
        let ny = ((bb.height() / cell_size).ceil() as usize).max(1);
        let mut index = Self {
            origin: bb.min,
            cell_size,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
            cell_boxes: Vec::with_capacity(n),
        };
        for c in 0..mesh.num_cells() {
            let cb = BoundingBox::of_points(&mesh.cell_vertices(c));
            let (i0, j0, i1, j1) = index.range(&cb);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    index.buckets[j * nx + i].push(c);
                }
            }
            index.cell_boxes.push(cb);
        }
        index
    }

    fn clamp_i(&self, x: f64) -> usize {
        (((x - self.origin.x) / self.cell_size).floor().max(0.0) as usize).min(self.nx - 1)
    }

    fn clamp_j(&self, y: f64) -> usize {
        (((y - self.origin.y) / self.cell_size).floor().max(0.0) as usize).min(self.ny - 1)
    }

    fn range(&self, bb: &BoundingBox) -> (usize, usize, usize, usize) {
        (
            self.clamp_i(bb.min.x),
            self.clamp_j(bb.min.y),
            self.clamp_i(bb.max.x),
            self.clamp_j(bb.max.y),
        )
    }

    /// Cells whose bounding boxes overlap `bb`, ascending.
    pub fn candidates(&self, bb: &BoundingBox) -> Vec<usize> {
        let (i0, j0, i1, j1) = self.range(bb);
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                for &c in &self.buckets[j * self.nx + i] {
                    let cb = &self.cell_boxes[c];
                    if cb.min.x <= bb.max.x
                        && cb.max.x >= bb.min.x
                        && cb.min.y <= bb.max.y
                        && cb.max.y >= bb.min.y
                    {
                        out.push(c);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Cell containing `p` and the reference coordinates of `p` in it. When no
    /// cell contains `p` (points slightly outside a curved boundary), the cell
    /// with the smallest reference-coordinate overshoot is returned and the
    /// reference point extrapolates.
    pub fn locate(&self, mesh: &QuadMesh, p: Point2) -> Option<(usize, Point2)> {
        let mut radius = 0.0;
        for _ in 0..4 {
            let bb = BoundingBox {
                min: Point2::new(p.x - radius, p.y - radius),
                max: Point2::new(p.x + radius, p.y + radius),
            };
            let mut best: Option<(f64, usize, Point2)> = None;
            for c in self.candidates(&bb) {
                let q = mesh.cell_map(c).inverse(p);
                let over = [-q.x, q.x - 1.0, -q.y, q.y - 1.0]
                    .into_iter()
                    .fold(0.0f64, f64::max);
                if over <= 1e-10 {
                    return Some((c, q));
                }
                if best.map_or(true, |(b, _, _)| over < b) {
                    best = Some((over, c, q));
                }
            }
            if let Some((over, c, q)) = best {
                if over < 0.5 {
                    return Some((c, q));
                }
            }
            radius = if radius == 0.0 { self.cell_size } else { 2.0 * radius };
        }
        None
    }

    /// Like [`locate`](Self::locate), but never fails: points far outside
    /// the mesh go to the cell with the smallest reference overshoot.
    pub fn locate_or_nearest(&self, mesh: &QuadMesh, p: Point2) -> (usize, Point2) {
        if let Some(hit) = self.locate(mesh, p) {
            return hit;
        }
        (0..mesh.num_cells())
            .map(|c| {
                let q = mesh.cell_map(c).inverse(p);
                let over = [-q.x, q.x - 1.0, -q.y, q.y - 1.0]
                    .into_iter()
                    .fold(0.0f64, f64::max);
                (over, c, q)
            })
            .filter(|(over, _, _)| over.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, c, q)| (c, q))
            .expect("mesh has at least one cell")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64, n: usize) -> DomainSpec {
        DomainSpec::new(
            DomainKind::Rectangle {
                min: Point2::new(x0, y0),
                max: Point2::new(x1, y1),
            },
            n,
        )
    }

    fn disk(n: usize) -> DomainSpec {
        DomainSpec::new(
            DomainKind::Disk {
                center: Point2::new(0.0, 0.0),
                radius: 1.0,
            },
            n,
        )
    }

    fn flower(n: usize) -> DomainSpec {
        DomainSpec::new(
            DomainKind::Flower {
                center: Point2::new(0.0, 0.0),
                radius: 1.0,
                amplitude: 0.1,
                petals: 5,
            },
            n,
        )
    }

    fn lshape(n: usize) -> DomainSpec {
        DomainSpec::new(
            DomainKind::Lshape {
                min: Point2::new(1.0, 1.0),
                size: 2.0,
            },
            n,
        )
    }

    #[test]
    fn structured_grid_counts() {
        let m = build_mesh(&rect(0.0, 0.0, 6.0, 6.0, 6), 0).unwrap();
        assert_eq!(m.num_cells(), 36);
        assert_eq!(m.num_nodes(), 49);
        assert!((m.h - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(m.boundary_nodes.len(), 24);
        m.validate().unwrap();
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(build_mesh(&rect(1.0, 0.0, 0.0, 1.0, 2), 0).is_err());
        assert!(build_mesh(&rect(0.0, 0.0, 1.0, 1.0, 0), 0).is_err());
        let bad_disk = DomainSpec::new(
            DomainKind::Disk {
                center: Point2::new(0.0, 0.0),
                radius: -1.0,
            },
            2,
        );
        assert!(build_mesh(&bad_disk, 0).is_err());
    }

    #[test]
    fn refine_single_cell() {
        let m = build_mesh(&rect(0.0, 0.0, 1.0, 1.0, 1), 0).unwrap();
        let r = refine_uniform(&m);
        assert_eq!(r.num_cells(), 4);
        assert_eq!(r.num_nodes(), 9);
        assert!((r.h - 0.5 * m.h).abs() < 1e-15);
        assert_eq!(r.boundary_nodes.len(), 8);
    }

    #[test]
    fn lshape_area_is_exact() {
        for level in 0..4 {
            let m = build_mesh(&lshape(2), level).unwrap();
            assert!((m.total_area() - 3.0).abs() < 1e-13);
            m.validate().unwrap();
            // boundary nodes lie on the six boundary segments
            for &b in &m.boundary_nodes {
                let p = m.nodes[b];
                let on = (p.x - 1.0).abs() < 1e-12
                    || (p.y - 1.0).abs() < 1e-12
                    || ((p.x - 3.0).abs() < 1e-12 && p.y <= 2.0 + 1e-12)
                    || ((p.y - 3.0).abs() < 1e-12 && p.x <= 2.0 + 1e-12)
                    || ((p.x - 2.0).abs() < 1e-12 && p.y >= 2.0 - 1e-12)
                    || ((p.y - 2.0).abs() < 1e-12 && p.x >= 2.0 - 1e-12);
                assert!(on, "{p:?}");
            }
        }
    }

    #[test]
    fn polygonal_refinement_conserves_area() {
        let m = build_mesh(&rect(-1.4, -1.4, 1.4, 1.4, 3), 0).unwrap();
        let a0 = m.total_area();
        let r = refine_uniform(&refine_uniform(&m));
        assert!((r.total_area() - a0).abs() <= 1e-12 * a0);
    }

    #[test]
    fn disk_areas_converge_to_pi() {
        let pi = std::f64::consts::PI;
        let errs: Vec<f64> = (0..4)
            .map(|l| {
                let m = build_mesh(&disk(2), l).unwrap();
                m.validate().unwrap();
                pi - m.total_area()
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[0] > 0.0 && w[1] > 0.0);
            let ratio = w[0] / w[1];
            assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
        }
        // Richardson extrapolation of the O(h²) geometric error recovers π
        let a: Vec<f64> = errs.iter().map(|e| pi - e).collect();
        let extrapolated = (4.0 * a[3] - a[2]) / 3.0;
        assert!((extrapolated - pi).abs() < 1e-4);
    }

    #[test]
    fn disk_layout() {
        let m = build_mesh(&disk(1), 0).unwrap();
        assert_eq!(m.num_cells(), 5);
        assert_eq!(m.num_nodes(), 8);
        assert_eq!(m.boundary_nodes.len(), 4);
        let m3 = build_mesh(&disk(3), 0).unwrap();
        assert_eq!(m3.num_cells(), 45);
        for level in 0..4 {
            let m = build_mesh(&disk(2), level).unwrap();
            for &b in &m.boundary_nodes {
                assert!((m.nodes[b].norm() - 1.0).abs() < 1e-10);
            }
            for c in 0..m.num_cells() {
                assert!(cell_polygon(&m, c).unwrap().area() > 0.0);
            }
        }
    }

    #[test]
    fn flower_cells_within_radius_bound() {
        for level in 0..4 {
            let m = build_mesh(&flower(2), level).unwrap();
            m.validate().unwrap();
            for c in 0..m.num_cells() {
                for v in m.cell_vertices(c) {
                    assert!(v.norm() <= 1.1 + 1e-10);
                }
            }
        }
        let exact = flower(1).exact_area();
        let a = build_mesh(&flower(2), 4).unwrap().total_area();
        assert!((a - exact).abs() < 2e-3 * exact);
    }

    #[test]
    fn refinement_halves_h_and_keeps_shape_regularity() {
        for spec in [rect(0.0, 0.0, 6.0, 6.0, 6), lshape(1), disk(7), flower(16)] {
            let mut prev = build_mesh(&spec, 0).unwrap();
            for level in 1..4 {
                let m = build_mesh(&spec, level).unwrap();
                let ratio = m.h / prev.h;
                assert!((0.45..=0.55).contains(&ratio), "{spec:?} level {level}: {ratio}");
                assert!(m.h <= 0.51 * prev.h, "{spec:?} level {level}: {ratio}");
                assert!(m.area_ratio() >= 0.8 * prev.area_ratio(), "{spec:?} level {level}: {} vs {}", m.area_ratio(), prev.area_ratio());
                assert_eq!(m.num_cells(), 4 * prev.num_cells());
                prev = m;
            }
        }
    }

    #[test]
    fn structured_h_halves_exactly() {
        let m0 = build_mesh(&rect(0.0, 0.0, 6.0, 6.0, 6), 0).unwrap();
        let m1 = refine_uniform(&m0);
        assert!((m1.h / m0.h - 0.5).abs() < 0.01);
        assert!(m1.h <= 0.51 * m0.h);
    }

    #[test]
    fn cell_polygon_bounds() {
        let m = build_mesh(&rect(0.0, 0.0, 2.0, 2.0, 2), 0).unwrap();
        let p = cell_polygon(&m, 0).unwrap();
        assert_eq!(
            p.vertices(),
            &[
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0)
            ]
        );
        assert!(cell_polygon(&m, 4).is_err());
    }

    #[test]
    fn locate_points() {
        let m = build_mesh(&disk(2), 2).unwrap();
        let idx = CellIndex::new(&m);
        for &(x, y) in &[(0.0, 0.0), (0.3, -0.7), (-0.99, 0.01), (0.5, 0.5)] {
            let p = Point2::new(x, y);
            let (c, q) = idx.locate(&m, p).unwrap();
            assert!(m.cell_map(c).map(q).dist(p) < 1e-12);
        }
        // just outside the polygonal approximation of the circle
        let p = Point2::new(0.99999, 0.0);
        assert!(idx.locate(&m, p).is_some());
    }
}
