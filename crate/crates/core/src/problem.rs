//! The benchmark examples, coefficient cases and element pairs, and the
//! discretization of one refinement level.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupling::{build_intersections, CouplingTable};
use crate::element::ElementFamily;
use crate::error::{FdError, Result};
use crate::geometry::Point2;
use crate::mesh::{build_mesh, DomainKind, DomainSpec, QuadMesh};
use crate::norms::ExactField;
use crate::space::{build_space, DirichletBC, FeSpace};
use crate::system::{
    assemble_system, solve_saddle_with, BlockSystem, Coefficients, SolutionTriple, SystemInput, RESIDUAL_TOLERANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Example {
    /// Ω = [0,6]², Ω2 = [e, 1+π]²
    Square,
    /// Ω = [0,6]², Ω2 = [1,3]² \ [2,3]²
    Lshape,
    /// Ω = [-1.4,1.4]², Ω2 = unit disk
    Disk,
    /// Ω = [-2,3]², Ω2 bounded by r = 1 + 0.1 cos 5θ
    Flower,
}

impl Example {
    pub const ALL: [Example; 4] = [Example::Square, Example::Lshape, Example::Disk, Example::Flower];

    pub fn number(self) -> u32 {
        match self {
            Example::Square => 1,
            Example::Lshape => 2,
            Example::Disk => 3,
            Example::Flower => 4,
        }
    }

    pub fn background(self) -> DomainKind {
        let (lo, hi) = match self {
            Example::Square | Example::Lshape => (0.0, 6.0),
            Example::Disk => (-1.4, 1.4),
            Example::Flower => (-2.0, 3.0),
        };
        DomainKind::Rectangle {
            min: Point2::new(lo, lo),
            max: Point2::new(hi, hi),
        }
    }

    pub fn immersed(self) -> DomainKind {
        let origin = Point2::new(0.0, 0.0);
        match self {
            Example::Square => DomainKind::SquarePatch {
                min: Point2::new(E, E),
                side: 1.0 + PI - E,
            },
            Example::Lshape => DomainKind::Lshape {
                min: Point2::new(1.0, 1.0),
                size: 2.0,
            },
            Example::Disk => DomainKind::Disk {
                center: origin,
                radius: 1.0,
            },
            Example::Flower => DomainKind::Flower {
                center: origin,
                radius: 1.0,
                amplitude: 0.1,
                petals: 5,
            },
        }
    }
}

impl TryFrom<u32> for Example {
    type Error = FdError;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Example::Square),
            2 => Ok(Example::Lshape),
            3 => Ok(Example::Disk),
            4 => Ok(Example::Flower),
            _ => Err(FdError::InvalidParameter(format!("example must be 1-4, got {v}"))),
        }
    }
}

impl From<Example> for u32 {
    fn from(e: Example) -> u32 {
        e.number()
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Coefficient pairs `(β, β2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Case {
    Mild,
    Strong,
    Inverted,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::Mild, Case::Strong, Case::Inverted];

    pub fn number(self) -> u32 {
        match self {
            Case::Mild => 1,
            Case::Strong => 2,
            Case::Inverted => 3,
        }
    }

    pub fn coefficients(self) -> Coefficients {
        let (beta, beta2) = match self {
            Case::Mild => (1.0, 10.0),
            Case::Strong => (1.0, 10000.0),
            Case::Inverted => (10.0, 1.0),
        };
        Coefficients { beta, beta2 }
    }
}

impl TryFrom<u32> for Case {
    type Error = FdError;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Case::Mild),
            2 => Ok(Case::Strong),
            3 => Ok(Case::Inverted),
            _ => Err(FdError::InvalidParameter(format!("case must be 1-3, got {v}"))),
        }
    }
}

impl From<Case> for u32 {
    fn from(c: Case) -> u32 {
        c.number()
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Element triples for `(Vh, V2h, Λh)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ElementChoice {
    /// Q1 / Q1 + bubble / P0
    Elm1,
    /// Q2 / Q2 / P0
    Elm2,
    /// Q1 / Q1 / P0, not inf-sup stable
    Q1Q1P0,
}

impl ElementChoice {
    pub const ALL: [ElementChoice; 3] = [ElementChoice::Elm1, ElementChoice::Elm2, ElementChoice::Q1Q1P0];
    pub const VALID_TAGS: &'static str = "elm1, elm2, q1q1p0";

    pub fn tag(self) -> &'static str {
        match self {
            ElementChoice::Elm1 => "elm1",
            ElementChoice::Elm2 => "elm2",
            ElementChoice::Q1Q1P0 => "q1q1p0",
        }
    }

    pub fn families(self) -> (ElementFamily, ElementFamily, ElementFamily) {
        match self {
            ElementChoice::Elm1 => (ElementFamily::Q1, ElementFamily::Q1B, ElementFamily::P0),
            ElementChoice::Elm2 => (ElementFamily::Q2, ElementFamily::Q2, ElementFamily::P0),
            ElementChoice::Q1Q1P0 => (ElementFamily::Q1, ElementFamily::Q1, ElementFamily::P0),
        }
    }
}

impl FromStr for ElementChoice {
    type Err = FdError;

    fn from_str(s: &str) -> Result<Self> {
        ElementChoice::ALL
            .into_iter()
            .find(|e| e.tag() == s)
            .ok_or_else(|| {
                FdError::InvalidParameter(format!(
                    "unknown element tag '{s}'; valid tags are {}",
                    ElementChoice::VALID_TAGS
                ))
            })
    }
}

impl TryFrom<String> for ElementChoice {
    type Error = FdError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ElementChoice> for String {
    fn from(e: ElementChoice) -> String {
        e.tag().to_string()
    }
}

impl fmt::Display for ElementChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One experiment: geometry, coefficients, elements, resolution and sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemConfig {
    pub example: Example,
    pub case: Case,
    pub element: ElementChoice,
    /// Background cells per side at level 0.
    pub base_cells: usize,
    /// Target `h2 / h`.
    pub ratio: f64,
    pub f: f64,
    pub f2: f64,
    /// Largest accepted relative residual of the full system.
    pub residual_tolerance: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            example: Example::Disk,
            case: Case::Mild,
            element: ElementChoice::Elm1,
            base_cells: 16,
            ratio: 1.0,
            f: 1.0,
            f2: 1.0,
            residual_tolerance: RESIDUAL_TOLERANCE,
        }
    }
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_cells == 0 {
            return Err(FdError::InvalidParameter("base_cells must be at least 1".into()));
        }
        if !(self.ratio > 0.0 && self.ratio.is_finite()) {
            return Err(FdError::InvalidParameter(format!(
                "ratio must be positive, got {}",
                self.ratio
            )));
        }
        if !(self.f.is_finite() && self.f2.is_finite()) {
            return Err(FdError::InvalidParameter("sources must be finite".into()));
        }
        if !(self.residual_tolerance > 0.0) {
            return Err(FdError::InvalidParameter(format!(
                "residual_tolerance must be positive, got {}",
                self.residual_tolerance
            )));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Coefficients {
        self.case.coefficients()
    }

    pub fn background_spec(&self) -> DomainSpec {
        DomainSpec::new(self.example.background(), self.base_cells)
    }

    /// Immersed mesh spec whose level-0 mesh size is closest to
    /// `ratio · h` of the level-0 background mesh.
    pub fn immersed_spec(&self) -> Result<DomainSpec> {
        self.validate()?;
        let bg = build_mesh(&self.background_spec(), 0)?;
        let target = self.ratio * bg.h;
        let kind = self.example.immersed();
        let n = match kind {
            DomainKind::SquarePatch { side, .. } => (side * 2f64.sqrt() / target).round() as usize,
            DomainKind::Lshape { size, .. } => (0.5 * size * 2f64.sqrt() / target).round() as usize,
            _ => {
                // h2 ≈ c / n on the block meshes; sample c, then search nearby
                let probe = 8;
                let c = build_mesh(&DomainSpec::new(kind, probe), 0)?.h * probe as f64;
                let guess = (c / target).round().max(1.0) as usize;
                let mut best = (f64::INFINITY, guess);
                for n in guess.saturating_sub(2).max(1)..=guess + 2 {
                    let h2 = build_mesh(&DomainSpec::new(kind, n), 0)?.h;
                    let miss = (h2 / target).ln().abs();
                    if miss < best.0 {
                        best = (miss, n);
                    }
                }
                best.1
            }
        };
        Ok(DomainSpec::new(kind, n.max(1)))
    }

    /// Exact solution when one is known (disk geometry with unit sources).
    pub fn exact_solution(&self) -> Option<ExactSolution> {
        (self.example == Example::Disk && self.f == 1.0 && self.f2 == 1.0).then_some(ExactSolution { case: self.case })
    }
}

/// Radial solutions on the unit disk inside Ω with `f = f2 = 1`:
/// `U = (a - b r²) / c` piecewise, continuous with matching flux at r = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolution {
    pub case: Case,
}

impl ExactSolution {
    /// `(a, b, c)` for the outer and inner pieces.
    fn params(&self) -> ([f64; 3], [f64; 3]) {
        match self.case {
            Case::Mild => ([4.0, 1.0, 4.0], [31.0, 1.0, 40.0]),
            Case::Strong => ([4.0, 1.0, 4.0], [30001.0, 1.0, 40000.0]),
            Case::Inverted => ([4.0, 1.0, 40.0], [13.0, 10.0, 40.0]),
        }
    }

    fn value(p: [f64; 3], x: Point2) -> f64 {
        (p[0] - p[1] * (x.x * x.x + x.y * x.y)) / p[2]
    }

    fn grad(p: [f64; 3], x: Point2) -> [f64; 2] {
        let s = -2.0 * p[1] / p[2];
        [s * x.x, s * x.y]
    }

    pub fn u1(&self, x: Point2) -> f64 {
        Self::value(self.params().0, x)
    }

    pub fn u1_grad(&self, x: Point2) -> [f64; 2] {
        Self::grad(self.params().0, x)
    }

    pub fn u2(&self, x: Point2) -> f64 {
        Self::value(self.params().1, x)
    }

    pub fn u2_grad(&self, x: Point2) -> [f64; 2] {
        Self::grad(self.params().1, x)
    }

    /// Calls `k` with the outer and inner fields.
    pub fn with_fields<R>(&self, k: impl FnOnce(&ExactField, &ExactField) -> R) -> R {
        let (v1, g1) = (|x| self.u1(x), |x| self.u1_grad(x));
        let (v2, g2) = (|x| self.u2(x), |x| self.u2_grad(x));
        k(
            &ExactField { value: &v1, grad: &g1 },
            &ExactField { value: &v2, grad: &g2 },
        )
    }
}

/// Meshes, spaces and intersection table of one level.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub level: usize,
    pub background: Arc<QuadMesh>,
    pub immersed: Arc<QuadMesh>,
    pub vh: FeSpace,
    pub v2: FeSpace,
    pub lambda: FeSpace,
    pub coupling: CouplingTable,
}

impl Discretization {
    pub fn h(&self) -> f64 {
        self.background.h
    }

    pub fn h2(&self) -> f64 {
        self.immersed.h
    }
}

/// Immersed mesh and spaces only (enough for the inf-sup test).
pub fn immersed_spaces(cfg: &ProblemConfig, level: usize) -> Result<(FeSpace, FeSpace)> {
    let t2 = Arc::new(build_mesh(&cfg.immersed_spec()?, level)?);
    let (_, f2, fl) = cfg.element.families();
    Ok((build_space(t2.clone(), f2), build_space(t2, fl)))
}

pub fn discretize(cfg: &ProblemConfig, level: usize) -> Result<Discretization> {
    cfg.validate()?;
    let bg_spec = cfg.background_spec();
    let background = Arc::new(build_mesh(&bg_spec, level)?);
    let immersed = Arc::new(build_mesh(&cfg.immersed_spec()?, level)?);
    let outer = background.bounding_box();
    let inner = immersed.bounding_box();
    if !(inner.min.x > outer.min.x && inner.min.y > outer.min.y && inner.max.x < outer.max.x && inner.max.y < outer.max.y) {
        return Err(FdError::InvalidDomain(
            "the immersed domain must lie strictly inside the background domain".into(),
        ));
    }
    let (fv, f2, fl) = cfg.element.families();
    let coupling = build_intersections(&immersed, &background)?;
    Ok(Discretization {
        level,
        vh: build_space(background.clone(), fv),
        v2: build_space(immersed.clone(), f2),
        lambda: build_space(immersed.clone(), fl),
        background,
        immersed,
        coupling,
    })
}

/// Assembled system and solution of one level.
#[derive(Debug, Clone)]
pub struct LevelSolve {
    pub disc: Discretization,
    pub system: BlockSystem,
    pub solution: SolutionTriple,
}

pub fn assemble(cfg: &ProblemConfig, disc: &Discretization) -> Result<BlockSystem> {
    let (fc, f2c) = (cfg.f, cfg.f2);
    let f = move |_: Point2| fc;
    let f2 = move |_: Point2| f2c;
    assemble_system(&SystemInput {
        vh: &disc.vh,
        v2: &disc.v2,
        lambda: &disc.lambda,
        coupling: &disc.coupling,
        coeffs: cfg.coefficients(),
        f: &f,
        f2: &f2,
    })
}

/// Boundary data: the exact outer solution when known, zero otherwise.
pub fn boundary_condition(cfg: &ProblemConfig, vh: &FeSpace) -> DirichletBC {
    match cfg.exact_solution() {
        Some(ex) => DirichletBC::from_fn(vh, |x| ex.u1(x)),
        None => DirichletBC::homogeneous(vh),
    }
}

pub fn solve_level(cfg: &ProblemConfig, level: usize) -> Result<LevelSolve> {
    let disc = discretize(cfg, level)?;
    let system = assemble(cfg, &disc)?;
    let solution = solve_saddle_with(&system, &boundary_condition(cfg, &disc.vh), cfg.residual_tolerance)?;
    Ok(LevelSolve { disc, system, solution })
}
