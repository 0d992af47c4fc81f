//! Reference computations that do not use the score: a grid transfer
//! operator for 1-D torus maps, and finite differences with common random
//! numbers.

pub mod fd;
pub mod grid;

pub use fd::{fd_ensemble_response, FdOracleConfig};
pub use grid::{
    grid_linear_response, push_density, stationary_density, GridDensity, GridOperator, DEFAULT_GRID,
    DEFAULT_TOL,
};
