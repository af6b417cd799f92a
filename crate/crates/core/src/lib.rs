//! Finite-difference evolution and diagnostics for the Einstein-Yang-Mills
//! equations written as a coupled system of nonlinear wave equations in
//! Lorenz gauge and wave coordinates.
//!
//! The crate is organised around the pipeline
//!
//! ```text
//! InitialDataSet --build--> SpacetimeState --rk4--> ... --> DiagnosticsReport
//! ```
//!
//! with gauge monitors (`Lambda`, `Gamma^lambda`), constraint residuals,
//! weighted energy norms and decay diagnostics sampled along the run.
//! All derivatives go through [`grid`]; all Lie-algebra arithmetic goes
//! through [`algebra`].

// Tensor contractions read best as explicit index loops.
#![allow(clippy::needless_range_loop)]

pub mod algebra;
pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod evolution;
pub mod gauge;
pub mod geometry;
pub mod grid;
pub mod initial;
pub mod par;
pub mod report;

pub use algebra::{AlgebraElement, AlgebraSpec};
pub use config::RunConfig;
pub use evolution::SpacetimeState;
pub use grid::{Boundary, GridFunction, GridSpec};
pub use initial::InitialDataSet;
pub use report::DiagnosticsReport;

/// Errors surfaced by the solver and its I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical error at t={t}, point {point:?}: {what}")]
    Numerical {
        what: String,
        t: f64,
        point: Vec<usize>,
    },

    #[error("invariant `{invariant}` violated at t={t}, point {point:?} (stage {stage})")]
    InvariantViolation {
        invariant: String,
        t: f64,
        point: Vec<usize>,
        stage: usize,
    },

    #[error("instability detected at t={t}: field norm grew by {factor:.3e}x over its initial value")]
    Instability { t: f64, factor: f64 },

    #[error("iteration did not converge after {iters} iterations (residual {residual:.6e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
