//! Planar geometry kernel: points, convex polygons, Sutherland–Hodgman
//! clipping and centroid fans.
//!
//! Everything here is a pure function of its inputs and safe to call from
//! any thread.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{FdError, Result};

/// Intersections smaller than this fraction of the subject area are dropped.
pub const DEGENERATE_AREA_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// z-component of the cross product `self × other`.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Polar angle in (-π, π].
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point2,
    pub max: Point2,
}

impl BoundingBox {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Self {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    pub fn union(self, other: BoundingBox) -> Self {
        Self {
            min: Point2::new(self.min.x.min(other.min.x), self.min.y.min(other.min.y)),
            max: Point2::new(self.max.x.max(other.max.x), self.max.y.max(other.max.y)),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

/// Shoelace signed area of a closed vertex loop; positive when counterclockwise.
pub fn signed_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    // about the first vertex, so far-from-origin polygons keep their digits
    let o = vertices[0];
    let mut twice = 0.0;
    for i in 1..n - 1 {
        twice += (vertices[i] - o).cross(vertices[i + 1] - o);
    }
    0.5 * twice
}

/// A convex polygon with counterclockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    /// Validates orientation and convexity.
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(FdError::InvalidDomain(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(FdError::InvalidDomain("non-finite polygon vertex".into()));
        }
        let poly = Self { vertices };
        if poly.signed_area() <= 0.0 {
            return Err(FdError::InvalidDomain(
                "polygon is not counterclockwise".into(),
            ));
        }
        if !poly.is_convex() {
            return Err(FdError::InvalidDomain("polygon is not convex".into()));
        }
        Ok(poly)
    }

    /// Wraps a vertex loop without checking orientation or convexity.
    pub fn from_vertices_unchecked(vertices: Vec<Point2>) -> Self {
        Self { vertices }
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Vertex average; lies inside any convex polygon.
    pub fn vertex_centroid(&self) -> Point2 {
        let n = self.vertices.len() as f64;
        let s = self
            .vertices
            .iter()
            .fold(Point2::default(), |acc, &p| acc + p);
        s * (1.0 / n)
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::of_points(&self.vertices)
    }

    /// Longest distance between two vertices.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max(a.dist(*b));
            }
        }
        d
    }

    /// All turns are left turns up to `ε·scale²`.
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        let bb = self.bounding_box();
        let scale = bb.width().max(bb.height());
        let tol = 1e-12 * scale * scale;
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            (b - a).cross(c - b) >= -tol
        })
    }

    /// Point inside or on the boundary, with absolute tolerance `tol` on the
    /// edge distances.
    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let e = b - a;
            let len = e.norm();
            len == 0.0 || e.cross(p - a) / len >= -tol
        })
    }
}

/// Clips `poly` against the half-plane to the left of the directed line `a → b`.
fn clip_half_plane(poly: &[Point2], a: Point2, b: Point2, out: &mut Vec<Point2>) {
    out.clear();
    let n = poly.len();
    if n == 0 {
        return;
    }
    let dir = b - a;
    let side = |p: Point2| dir.cross(p - a);
    let mut prev = poly[n - 1];
    let mut prev_side = side(prev);
    for &cur in poly {
        let cur_side = side(cur);
        let cur_in = cur_side >= 0.0;
        let prev_in = prev_side >= 0.0;
        if cur_in != prev_in {
            let t = prev_side / (prev_side - cur_side);
            out.push(prev + (cur - prev) * t);
        }
        if cur_in {
            out.push(cur);
        }
        prev = cur;
        prev_side = cur_side;
    }
}

fn dedup_vertices(vertices: &mut Vec<Point2>, tol: f64) {
    vertices.dedup_by(|b, a| a.dist(*b) <= tol);
    while vertices.len() > 1 && vertices[0].dist(*vertices.last().unwrap()) <= tol {
        vertices.pop();
    }
}

/// Intersection of two convex counterclockwise polygons.
///
/// Returns `None` when the overlap has area below
/// [`DEGENERATE_AREA_FRACTION`] times the subject area.
pub fn clip_convex(subject: &ConvexPolygon, clipper: &ConvexPolygon) -> Option<ConvexPolygon> {
    let subject_area = subject.area();
    let mut current = subject.vertices.clone();
    let mut scratch = Vec::with_capacity(current.len() + 4);
    let m = clipper.vertices.len();
    for i in 0..m {
        let a = clipper.vertices[i];
        let b = clipper.vertices[(i + 1) % m];
        clip_half_plane(&current, a, b, &mut scratch);
        std::mem::swap(&mut current, &mut scratch);
        if current.len() < 3 {
            return None;
        }
    }
    let bb = subject.bounding_box();
    dedup_vertices(&mut current, 1e-14 * bb.width().max(bb.height()));
    if current.len() < 3 {
        return None;
    }
    let area = signed_area(&current);
    if area < DEGENERATE_AREA_FRACTION * subject_area {
        return None;
    }
    Some(ConvexPolygon { vertices: current })
}

pub type Triangle = [Point2; 3];

/// Splits a convex polygon into triangles fanned from its vertex centroid,
/// one per edge.
pub fn fan_triangulate(poly: &ConvexPolygon) -> Vec<Triangle> {
    let c = poly.vertex_centroid();
    let n = poly.vertices.len();
    (0..n)
        .map(|i| [c, poly.vertices[i], poly.vertices[(i + 1) % n]])
        .collect()
}

pub fn triangle_area(t: &Triangle) -> f64 {
    0.5 * (t[1] - t[0]).cross(t[2] - t[0])
}
