//! Reference elements on the unit square, Gauss rules, and the bilinear
//! cell map.
//!
//! Local dof ordering follows the counterclockwise vertex order of a cell:
//!
//! ```text
//!   3 ---- 6 ---- 2        Q1 : 0..4 (vertices)
//!   |             |        Q2 : 0..4 vertices, 4..8 edge midpoints
//!   7      8      5             (edge k joins vertex k and k+1), 8 center
//!   |             |        Q1B: 0..4 vertices, 4 bubble
//!   0 ---- 4 ---- 1        P0 : 0 (constant)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{FdError, Result};
use crate::geometry::{Point2, Triangle};

/// Maximum number of local dofs of any family (Q2).
pub const MAX_LOCAL_DOFS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementFamily {
    Q1,
    Q2,
    /// Q1 enriched with the biquadratic cell bubble.
    Q1B,
    P0,
}

impl ElementFamily {
    pub fn ndofs(self) -> usize {
        match self {
            ElementFamily::Q1 => 4,
            ElementFamily::Q2 => 9,
            ElementFamily::Q1B => 5,
            ElementFamily::P0 => 1,
        }
    }

    /// Polynomial degree per coordinate direction.
    pub fn degree(self) -> usize {
        match self {
            ElementFamily::Q1 => 1,
            ElementFamily::Q2 | ElementFamily::Q1B => 2,
            ElementFamily::P0 => 0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ElementFamily::Q1 => "Q1",
            ElementFamily::Q2 => "Q2",
            ElementFamily::Q1B => "Q1B",
            ElementFamily::P0 => "P0",
        }
    }
}

/// Lattice position of each Q2 local dof in {0, 1, 2}².
const Q2_LATTICE: [(usize, usize); 9] = [
    (0, 0),
    (2, 0),
    (2, 2),
    (0, 2),
    (1, 0),
    (2, 1),
    (1, 2),
    (0, 1),
    (1, 1),
];

const Q1_CORNERS: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

fn lagrange2(k: usize, t: f64) -> f64 {
    match k {
        0 => 2.0 * (t - 0.5) * (t - 1.0),
        1 => 4.0 * t * (1.0 - t),
        _ => 2.0 * t * (t - 0.5),
    }
}

fn lagrange2_deriv(k: usize, t: f64) -> f64 {
    match k {
        0 => 4.0 * t - 3.0,
        1 => 4.0 - 8.0 * t,
        _ => 4.0 * t - 1.0,
    }
}

fn linear(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        1.0 - t
    } else {
        t
    }
}

fn linear_deriv(k: f64) -> f64 {
    if k == 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `B̂(x, y) = 16 x (1 - x) y (1 - y)`, equal to 1 at the cell center.
pub fn bubble(p: Point2) -> f64 {
    16.0 * p.x * (1.0 - p.x) * p.y * (1.0 - p.y)
}

fn bubble_grad(p: Point2) -> [f64; 2] {
    [
        16.0 * (1.0 - 2.0 * p.x) * p.y * (1.0 - p.y),
        16.0 * p.x * (1.0 - p.x) * (1.0 - 2.0 * p.y),
    ]
}

fn check_index(family: ElementFamily, i: usize) -> Result<()> {
    if i >= family.ndofs() {
        return Err(FdError::IndexOutOfRange {
            what: "local dof",
            index: i,
            len: family.ndofs(),
        });
    }
    Ok(())
}

fn basis_unchecked(family: ElementFamily, i: usize, p: Point2) -> f64 {
    match family {
        ElementFamily::P0 => 1.0,
        ElementFamily::Q1 => {
            let (a, b) = Q1_CORNERS[i];
            linear(a, p.x) * linear(b, p.y)
        }
        ElementFamily::Q1B => {
            if i == 4 {
                bubble(p)
            } else {
                let (a, b) = Q1_CORNERS[i];
                linear(a, p.x) * linear(b, p.y)
            }
        }
        ElementFamily::Q2 => {
            let (a, b) = Q2_LATTICE[i];
            lagrange2(a, p.x) * lagrange2(b, p.y)
        }
    }
}

fn grad_unchecked(family: ElementFamily, i: usize, p: Point2) -> [f64; 2] {
    match family {
        ElementFamily::P0 => [0.0, 0.0],
        ElementFamily::Q1 | ElementFamily::Q1B if i < 4 => {
            let (a, b) = Q1_CORNERS[i];
            [
                linear_deriv(a) * linear(b, p.y),
                linear(a, p.x) * linear_deriv(b),
            ]
        }
        ElementFamily::Q1 | ElementFamily::Q1B => bubble_grad(p),
        ElementFamily::Q2 => {
            let (a, b) = Q2_LATTICE[i];
            [
                lagrange2_deriv(a, p.x) * lagrange2(b, p.y),
                lagrange2(a, p.x) * lagrange2_deriv(b, p.y),
            ]
        }
    }
}

/// Value of local basis function `i` at reference point `p`.
pub fn eval_basis(family: ElementFamily, i: usize, p: Point2) -> Result<f64> {
    check_index(family, i)?;
    Ok(basis_unchecked(family, i, p))
}

/// Reference gradient of local basis function `i` at `p`.
pub fn eval_grad(family: ElementFamily, i: usize, p: Point2) -> Result<[f64; 2]> {
    check_index(family, i)?;
    Ok(grad_unchecked(family, i, p))
}

/// All basis values at `p`, written into `out[..ndofs]`.
pub fn basis_values(family: ElementFamily, p: Point2, out: &mut [f64]) {
    for (i, v) in out.iter_mut().take(family.ndofs()).enumerate() {
        *v = basis_unchecked(family, i, p);
    }
}

/// All reference gradients at `p`, written into `out[..ndofs]`.
pub fn basis_grads(family: ElementFamily, p: Point2, out: &mut [[f64; 2]]) {
    for (i, g) in out.iter_mut().take(family.ndofs()).enumerate() {
        *g = grad_unchecked(family, i, p);
    }
}

/// Reference coordinates of the nodal dofs (bubble and P0 dofs sit at the
/// center).
pub fn reference_dof_point(family: ElementFamily, i: usize) -> Point2 {
    match family {
        ElementFamily::P0 => Point2::new(0.5, 0.5),
        ElementFamily::Q1 | ElementFamily::Q1B if i < 4 => {
            let (a, b) = Q1_CORNERS[i];
            Point2::new(a, b)
        }
        ElementFamily::Q1 | ElementFamily::Q1B => Point2::new(0.5, 0.5),
        ElementFamily::Q2 => {
            let (a, b) = Q2_LATTICE[i];
            Point2::new(0.5 * a as f64, 0.5 * b as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
    /// Total-degree exactness for triangle rules, per-direction for square rules.
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point2, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    /// Maps the rule from the unit reference triangle onto `tri`.
    pub fn map_to_triangle(&self, tri: &Triangle) -> impl Iterator<Item = (Point2, f64)> + '_ {
        let [a, b, c] = *tri;
        let e1 = b - a;
        let e2 = c - a;
        let jac = e1.cross(e2).abs();
        self.iter()
            .map(move |(q, w)| (a + e1 * q.x + e2 * q.y, w * jac))
    }
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.5], vec![1.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // ascending order on [0, 1]
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Tensor Gauss–Legendre rule on [0, 1]² with `n` points per direction.
pub fn gauss_square(n: usize) -> Result<QuadratureRule> {
    if !(1..=6).contains(&n) {
        return Err(FdError::UnsupportedQuadrature(format!(
            "square rule needs 1..=6 points per direction, got {n}"
        )));
    }
    Ok(tensor_rule(n))
}

pub(crate) fn tensor_rule(n: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre_01(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push(Point2::new(x[i], x[j]));
            weights.push(w[i] * w[j]);
        }
    }
    QuadratureRule {
        points,
        weights,
        degree: 2 * n - 1,
    }
}

fn push_orbit3(rule: &mut QuadratureRule, a: f64, w: f64) {
    // barycentric (a, a, 1 - 2a) and permutations
    let b = 1.0 - 2.0 * a;
    for p in [Point2::new(a, a), Point2::new(b, a), Point2::new(a, b)] {
        rule.points.push(p);
        rule.weights.push(0.5 * w);
    }
}

/// Symmetric rule on the unit triangle (0,0), (1,0), (0,1), exact for total
/// degree `deg` (1..=5). All weights positive; they sum to 1/2.
pub fn gauss_triangle(deg: usize) -> Result<QuadratureRule> {
    let mut rule = QuadratureRule {
        points: Vec::new(),
        weights: Vec::new(),
        degree: deg,
    };
    match deg {
        1 => {
            rule.points.push(Point2::new(1.0 / 3.0, 1.0 / 3.0));
            rule.weights.push(0.5);
        }
        2 => push_orbit3(&mut rule, 1.0 / 6.0, 1.0 / 3.0),
        3 | 4 => {
            push_orbit3(&mut rule, 0.445_948_490_915_964_9, 0.223_381_589_678_011_5);
            push_orbit3(&mut rule, 0.091_576_213_509_770_74, 0.109_951_743_655_321_9);
        }
        5 => {
            let s15 = 15f64.sqrt();
            rule.points.push(Point2::new(1.0 / 3.0, 1.0 / 3.0));
            rule.weights.push(0.5 * 9.0 / 40.0);
            push_orbit3(&mut rule, (6.0 - s15) / 21.0, (155.0 - s15) / 1200.0);
            push_orbit3(&mut rule, (6.0 + s15) / 21.0, (155.0 + s15) / 1200.0);
        }
        _ => {
            return Err(FdError::UnsupportedQuadrature(format!(
                "triangle rule of degree {deg} (supported: 1..=5)"
            )))
        }
    }
    Ok(rule)
}

/// Collapsed-coordinate (Duffy) rule on the unit triangle built from an
/// `n`-point Gauss–Legendre rule; exact for total degree `2n - 2`.
pub fn collapsed_triangle(n: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre_01(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let u = x[i];
            let v = x[j];
            points.push(Point2::new(u, (1.0 - u) * v));
            weights.push(w[i] * w[j] * (1.0 - u));
        }
    }
    QuadratureRule {
        points,
        weights,
        degree: 2 * n - 2,
    }
}

/// Bilinear map from [0, 1]² onto a quadrilateral with counterclockwise
/// vertices `v[0..4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMap {
    v: [Point2; 4],
}

impl CellMap {
    pub fn new(v: [Point2; 4]) -> Self {
        Self { v }
    }

    pub fn vertices(&self) -> &[Point2; 4] {
        &self.v
    }

    pub fn map(&self, p: Point2) -> Point2 {
        let [a, b, c, d] = self.v;
        let (x, y) = (p.x, p.y);
        a * ((1.0 - x) * (1.0 - y)) + b * (x * (1.0 - y)) + c * (x * y) + d * ((1.0 - x) * y)
    }

    /// `[[∂x/∂ξ, ∂x/∂η], [∂y/∂ξ, ∂y/∂η]]`
    pub fn jacobian(&self, p: Point2) -> [[f64; 2]; 2] {
        let [a, b, c, d] = self.v;
        let dxi = (b - a) * (1.0 - p.y) + (c - d) * p.y;
        let deta = (d - a) * (1.0 - p.x) + (c - b) * p.x;
        [[dxi.x, deta.x], [dxi.y, deta.y]]
    }

    pub fn det(&self, p: Point2) -> f64 {
        let j = self.jacobian(p);
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    /// Physical gradient `J^{-T} ∇̂` from a reference gradient.
    pub fn physical_grad(jac: &[[f64; 2]; 2], det: f64, g: [f64; 2]) -> [f64; 2] {
        // J^{-T} = 1/det [[ j11, -j10], [-j01, j00]]
        [
            (jac[1][1] * g[0] - jac[1][0] * g[1]) / det,
            (-jac[0][1] * g[0] + jac[0][0] * g[1]) / det,
        ]
    }

    /// Reference coordinates of a physical point (Newton iteration). The
    /// returned point may lie outside [0, 1]² when `x` is outside the cell.
    pub fn inverse(&self, x: Point2) -> Point2 {
        let mut p = Point2::new(0.5, 0.5);
        let scale = (self.v[2] - self.v[0])
            .norm()
            .max((self.v[3] - self.v[1]).norm());
        for _ in 0..30 {
            let r = self.map(p) - x;
            let j = self.jacobian(p);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let dx = (j[1][1] * r.x - j[0][1] * r.y) / det;
            let dy = (-j[1][0] * r.x + j[0][0] * r.y) / det;
            p = Point2::new(p.x - dx, p.y - dy);
            if r.norm() <= 1e-15 * scale && dx.abs().max(dy.abs()) < 1e-15 {
                break;
            }
            if dx.abs().max(dy.abs()) < 1e-16 {
                break;
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [ElementFamily; 4] = [
        ElementFamily::Q1,
        ElementFamily::Q2,
        ElementFamily::Q1B,
        ElementFamily::P0,
    ];

    #[test]
    fn ndofs_match_family() {
        let n: Vec<usize> = ALL.iter().map(|f| f.ndofs()).collect();
        assert_eq!(n, vec![4, 9, 5, 1]);
    }

    #[test]
    fn q1_kronecker_and_center() {
        let f = ElementFamily::Q1;
        assert_eq!(eval_basis(f, 0, Point2::new(0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(eval_basis(f, 0, Point2::new(1.0, 0.0)).unwrap(), 0.0);
        for i in 0..4 {
            assert_eq!(eval_basis(f, i, Point2::new(0.5, 0.5)).unwrap(), 0.25);
        }
        assert!(eval_basis(f, 4, Point2::new(0.5, 0.5)).is_err());
        assert!(eval_grad(ElementFamily::P0, 1, Point2::new(0.5, 0.5)).is_err());
    }

    #[test]
    fn q2_kronecker_at_lattice() {
        let f = ElementFamily::Q2;
        assert_eq!(eval_basis(f, 8, Point2::new(0.5, 0.5)).unwrap(), 1.0);
        for i in 0..9 {
            for j in 0..9 {
                let v = eval_basis(f, i, reference_dof_point(f, j)).unwrap();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-15, "{i} {j} {v}");
            }
        }
    }

    #[test]
    fn bubble_values() {
        let f = ElementFamily::Q1B;
        assert_eq!(eval_basis(f, 4, Point2::new(0.5, 0.5)).unwrap(), 1.0);
        assert_eq!(eval_grad(f, 4, Point2::new(0.5, 0.5)).unwrap(), [0.0, 0.0]);
        for k in 0..50 {
            let t = k as f64 / 49.0;
            for p in [
                Point2::new(t, 0.0),
                Point2::new(t, 1.0),
                Point2::new(0.0, t),
                Point2::new(1.0, t),
            ] {
                assert!(bubble(p).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn q1_gradient_at_center() {
        // d/dx (1-x)(1-y) = -(1-y), at y = 1/2 -> -1/2
        let g = eval_grad(ElementFamily::Q1, 0, Point2::new(0.5, 0.5)).unwrap();
        assert_eq!(g, [-0.5, -0.5]);
    }

    #[test]
    fn square_rule_basics() {
        let r = gauss_square(1).unwrap();
        assert_eq!(r.points, vec![Point2::new(0.5, 0.5)]);
        assert_eq!(r.weights, vec![1.0]);
        let r2 = gauss_square(2).unwrap();
        let xy: f64 = r2.iter().map(|(p, w)| w * p.x * p.y).sum();
        assert!((xy - 0.25).abs() < 1e-15);
        let b: f64 = r2.iter().map(|(p, w)| w * bubble(p)).sum();
        assert!((b - 4.0 / 9.0).abs() < 1e-15);
        assert!(gauss_square(0).is_err());
        assert!(gauss_square(7).is_err());
    }

    fn monomial_square(a: i32, b: i32) -> f64 {
        1.0 / ((a + 1) as f64 * (b + 1) as f64)
    }

    /// ∫_T x^a y^b over the unit triangle = a! b! / (a + b + 2)!
    fn monomial_triangle(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn square_rule_exactness_table() {
        for n in 1..=6 {
            let r = gauss_square(n).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let d = 2 * n as i32 - 1;
            for a in 0..=d {
                for b in 0..=d {
                    let q: f64 = r.iter().map(|(p, w)| w * p.x.powi(a) * p.y.powi(b)).sum();
                    assert!(
                        (q - monomial_square(a, b)).abs() < 1e-13,
                        "n={n} a={a} b={b}"
                    );
                }
            }
        }
    }

    #[test]
    fn triangle_rule_exactness_table() {
        for deg in 1..=5usize {
            let r = gauss_triangle(deg).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert!((r.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
            for a in 0..=deg as u32 {
                for b in 0..=(deg as u32 - a) {
                    let q: f64 = r
                        .iter()
                        .map(|(p, w)| w * p.x.powi(a as i32) * p.y.powi(b as i32))
                        .sum();
                    assert!(
                        (q - monomial_triangle(a, b)).abs() < 1e-13,
                        "deg={deg} a={a} b={b}"
                    );
                }
            }
        }
        assert!(gauss_triangle(6).is_err());
        assert!(gauss_triangle(0).is_err());
    }

    #[test]
    fn triangle_symbolic_examples() {
        let r1 = gauss_triangle(1).unwrap();
        assert_eq!(r1.weights, vec![0.5]);
        let r2 = gauss_triangle(2).unwrap();
        let x2: f64 = r2.iter().map(|(p, w)| w * p.x * p.x).sum();
        assert!((x2 - 1.0 / 12.0).abs() < 1e-15);
        let r4 = gauss_triangle(4).unwrap();
        let x2y2: f64 = r4.iter().map(|(p, w)| w * p.x * p.x * p.y * p.y).sum();
        assert!((x2y2 - 1.0 / 180.0).abs() < 1e-15);
    }

    #[test]
    fn collapsed_rule_exactness() {
        for n in 2..=6usize {
            let r = collapsed_triangle(n);
            let d = 2 * n as u32 - 2;
            for a in 0..=d {
                for b in 0..=(d - a) {
                    let q: f64 = r
                        .iter()
                        .map(|(p, w)| w * p.x.powi(a as i32) * p.y.powi(b as i32))
                        .sum();
                    assert!((q - monomial_triangle(a, b)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn cell_map_inverse_and_jacobian() {
        let m = CellMap::new([
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.1),
            Point2::new(2.3, 1.7),
            Point2::new(-0.2, 1.2),
        ]);
        for &(x, y) in &[(0.1, 0.2), (0.5, 0.5), (0.9, 0.7), (0.0, 1.0)] {
            let p = Point2::new(x, y);
            let q = m.inverse(m.map(p));
            assert!(p.dist(q) < 1e-13);
            assert!(m.det(p) > 0.0);
        }
        let unit = CellMap::new([
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ]);
        assert_eq!(unit.jacobian(Point2::new(0.3, 0.8)), [[1.0, 0.0], [0.0, 1.0]]);
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0..=1.0f64, y in 0.0..=1.0f64) {
            let p = Point2::new(x, y);
            for f in [ElementFamily::Q1, ElementFamily::Q2, ElementFamily::Q1B] {
                let nodal = if f == ElementFamily::Q1B { 4 } else { f.ndofs() };
                let s: f64 = (0..nodal).map(|i| eval_basis(f, i, p).unwrap()).sum();
                prop_assert!((s - 1.0).abs() < 1e-13);
                let mut g = [0.0, 0.0];
                for i in 0..nodal {
                    let gi = eval_grad(f, i, p).unwrap();
                    g[0] += gi[0];
                    g[1] += gi[1];
                }
                prop_assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
            }
        }

        #[test]
        fn gradients_match_finite_differences(x in 0.01..0.99f64, y in 0.01..0.99f64) {
            let h = 1e-6;
            for f in [ElementFamily::Q1, ElementFamily::Q2, ElementFamily::Q1B, ElementFamily::P0] {
                for i in 0..f.ndofs() {
                    let g = eval_grad(f, i, Point2::new(x, y)).unwrap();
                    let fx = (eval_basis(f, i, Point2::new(x + h, y)).unwrap()
                        - eval_basis(f, i, Point2::new(x - h, y)).unwrap()) / (2.0 * h);
                    let fy = (eval_basis(f, i, Point2::new(x, y + h)).unwrap()
                        - eval_basis(f, i, Point2::new(x, y - h)).unwrap()) / (2.0 * h);
                    prop_assert!((g[0] - fx).abs() < 1e-6);
                    prop_assert!((g[1] - fy).abs() < 1e-6);
                }
            }
        }
    }
}
