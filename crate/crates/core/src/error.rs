use thiserror::Error;

pub type Result<T> = std::result::Result<T, FdError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("unsupported quadrature: {0}")]
    UnsupportedQuadrature(String),

    #[error(
        "immersed cell {cell} not covered by the background mesh: \
         fragments cover {covered:.6e} of area {area:.6e}"
    )]
    CoverageFailure {
        cell: usize,
        covered: f64,
        area: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular saddle-point factorization (n = {n}, n2 = {n2}, m = {m})")]
    SingularSystem { n: usize, n2: usize, m: usize },

    #[error("singular linear system of size {0}")]
    SingularMatrix(usize),

    #[error("relative residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("eigensolver failed: {0}")]
    EigenFailure(String),
}
