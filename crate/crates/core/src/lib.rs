//! A finite-dimensional numerical laboratory for Banach-valued martingale
//! inequalities.
//!
//! The crate simulates discrete-time martingales with values in `R^d`
//! equipped with a configurable norm, computes their covariation bilinear
//! forms and Gaussian characteristics, builds elementary stochastic
//! integrals against Brownian and compensated-Poisson drivers, and runs
//! seeded Monte Carlo experiments that measure both sides of two-sided
//! moment comparisons between running maxima and Gaussian
//! characteristics of covariation forms.
//!
//! Entry points:
//! - [`norms::NormSpec`] — the ambient norm and its dual.
//! - [`bilinear::SymBilinearForm`] — symmetric bilinear forms on the dual.
//! - [`gaussian`] — Gaussian characteristics `gamma(V)` and radonifying norms.
//! - [`martingales`] — path generators (dyadic trees, Gaussian walks,
//!   Brownian proxies, compound Poisson).
//! - [`quadvar`] — covariation forms and processes.
//! - [`stochint`] — elementary stochastic integrals and Poisson integrals.
//! - [`experiments`] — the ratio/probe harness with CSV and JSON reports.
//!
//! Every randomized routine takes an explicit seed or RNG stream; see the
//! runnable examples in `examples/` for end-to-end usage.

pub mod bilinear;
pub mod experiments;
pub mod gaussian;
pub mod martingales;
pub mod norms;
pub mod quadvar;
pub mod rng;
pub mod stochint;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("matrix is materially non-symmetric: max asymmetry {max_asym:.3e} exceeds {tol:.3e}")]
    NotSymmetric { max_asym: f64, tol: f64 },

    #[error("form is materially non-PSD: min eigenvalue {min_eig:.3e} (max {max_eig:.3e})")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("eigendecomposition failed (ill-conditioned input)")]
    EigenFailure,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
