//! Numerical laboratory for Muckenhoupt-weighted degenerate Laplacians on
//! finite lattices.
//!
//! The crate is organised bottom-up:
//!
//! * [`weights`]: weight families, cube and ball measures, class constants.
//! * [`lattice`]: cell-centered grids and the finite-volume operator.
//! * [`calculus`]: dense spectral calculus and the Calderón quadrature.
//! * [`norms`]: exact Lebesgue, weak and Lorentz norms of step functions.
//! * [`kernels`]: heat-kernel slices, Gaussian envelopes, Riesz comparison.
//! * [`harness`]: configured experiments, reports and verdicts.

pub mod calculus;
pub mod harness;
pub mod kernels;
pub mod lattice;
pub mod norms;
mod quad;
pub mod weights;

/// A point of the plane; one-dimensional objects ignore the second slot.
pub type Point = [f64; 2];

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid weight: {0}")]
    Weight(String),
    #[error("invalid cube or family: {0}")]
    Geometry(String),
    #[error("quadrature: {0}")]
    Quadrature(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error("eigensolver did not converge")]
    Eigen,
    #[error("spectral domain: {0}")]
    Domain(String),
    #[error("invalid scheme: {0}")]
    Scheme(String),
    #[error("kernel fit: {0}")]
    Fit(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
