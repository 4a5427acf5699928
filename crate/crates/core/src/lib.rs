//! Adaptive multilevel stochastic collocation for elliptic problems with random data.

pub mod driver;
pub mod error;
pub mod fem;
pub mod goal_estimator;
pub mod mesh;
pub mod pathwise;
pub mod multigrid;
pub mod problems;
pub mod quadrature;
pub mod smolyak;
pub mod sparse;

pub use error::{Error, Result};
