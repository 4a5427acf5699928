use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("triangle index {index} out of range (mesh has {count} triangles)")]
    TriangleOutOfRange { index: usize, count: usize },
    #[error("nodal vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("triangle {triangle} is degenerate (signed area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },
    #[error("unsupported quadrature degree {0} (supported: 2..=5)")]
    UnsupportedQuadrature(usize),
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("vector length {got} does not match the system size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("Dörfler parameter must lie in (0, 1), got {0}")]
    InvalidTheta(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmolyakError {
    #[error("quadrature level must be at least 1, got {0}")]
    InvalidLevel(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter box: {0}")]
    InvalidBounds(String),
    #[error("point {point:?} lies outside the parameter box")]
    OutOfBounds { point: Vec<f64> },
    #[error("index set is not downward closed: {0}")]
    NotDownwardClosed(String),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule input: {0}")]
    InvalidInput(String),
    #[error("rate fit needs at least two usable data points, got {0}")]
    InsufficientData(usize),
}

/// Crate-wide error.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Smolyak(#[from] SmolyakError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("integrand failed at {point:?}: {source}")]
    Integrand { point: Vec<f64>, source: Box<Error> },
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
