//! Unfitted mixed finite elements for elliptic interface problems: a
//! fictitious-domain formulation with a distributed Lagrange multiplier,
//! exact mesh-intersection coupling, a numerical inf-sup test, and
//! convergence studies.

pub mod coupling;
pub mod element;
pub mod error;
pub mod geometry;
pub mod infsup;
pub mod mesh;
pub mod norms;
pub mod problem;
pub mod solver;
pub mod space;
pub mod sparse;
pub mod study;
pub mod system;
pub mod vtk;

pub use error::{FdError, Result};
