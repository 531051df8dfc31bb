//! Certified reduced-basis pricing engine for European and American options
//! under Black–Scholes and Heston models.
//!
//! The crate is organized around the classical offline/online split:
//!
//! * [`market`] — model parametrizations, payoffs, boundary data.
//! * [`fem`] — P1 finite-element meshes and the affine operator assembly.
//! * [`detailed`] — detailed (high-dimensional) θ-scheme and PDAS solvers.
//! * [`offline`] — POD-Angle-Greedy construction of the reduced spaces.
//! * [`online`] — reduced operators and the fast reduced solver.
//! * [`estimate`] — a posteriori error bounds, stability constants,
//!   effectivity reporting.
//! * [`config`], [`study`], [`basis_io`] — run configuration, benchmark
//!   studies and the portable basis container used by the CLI.

pub mod basis_io;
pub mod config;
pub mod detailed;
pub mod estimate;
pub mod fem;
pub mod hash;
pub mod linalg;
pub mod market;
pub mod offline;
pub mod online;
pub mod study;
mod wire;

/// Crate-wide error type. Variants map onto the CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, parameter or argument (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// Numerical failure inside a solver or eigensolver (CLI exit code 3).
    #[error("solver failure: {0}")]
    Solver(String),
    /// A basis container does not match the operators it is used with
    /// (CLI exit code 4).
    #[error("config hash mismatch: {0}")]
    HashMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed basis container or data file.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
