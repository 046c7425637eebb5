//! Spectral solvers and Monte Carlo experiments for reconstructing the
//! initial state of semilinear parabolic equations from noisy final-time
//! observations.
//!
//! The library is organized bottom-up:
//!
//! - [`spectral`]: Dirichlet sine eigenbasis, spectral/grid fields,
//!   transforms, diagonal operators, weighted norms.
//! - [`stochastic`]: reproducible white-noise observations, coefficient
//!   perturbations, and the observation-error bound.
//! - [`sources`]: nonlinearities (clipped cubic, odd-root), their structural
//!   constants, and manufactured problem instances.
//! - [`evolve`]: forward time steppers (spectral exponential and grid-based
//!   finite difference paths).
//! - [`truncation`]: spectral cut-off reconstruction via backward Volterra
//!   iteration, with its parameter rule and error envelope.
//! - [`qr`]: damped-generator (quasi-reversibility) reconstruction, its
//!   parameter rule, clipping radius rule, and error envelopes.
//! - [`experiments`]: Monte Carlo drivers producing deterministic CSV
//!   reports (aggregation order is scheduling-invariant).
//! - [`config`]: TOML experiment descriptions.
//! - [`validate`]: end-to-end consistency checks runnable from the CLI.

pub mod config;
pub mod error;
pub mod evolve;
pub mod experiments;
pub mod qr;
pub mod sources;
pub mod spectral;
pub mod stochastic;
pub mod truncation;
pub mod validate;

pub use error::{Error, Result};
