//! Factor-augmented smoothing for discretely observed, noise-contaminated
//! functional data.
//!
//! The model writes each observed vector as a smooth basis expansion plus
//! a low-rank factor component plus idiosyncratic noise,
//! Y_i = Φ c_i + A f_i + ε_i, and estimates (C, A, F) by alternating a
//! roughness-penalized ridge solve for the coefficients with a principal
//! components step for the loadings. The crate provides:
//!
//! - [`basis`]: B-spline / Fourier systems, second derivatives, and the
//!   exact roughness penalty matrix;
//! - [`factor`]: loading extraction under the AᵀA/p = I scaling, the
//!   eigenvalue-ratio factor-count rule, and the complementary projector;
//! - [`estimator`]: the alternating fit with per-step mGCV penalty
//!   selection, plus the factor-free baseline smoother;
//! - [`covariance`]: the model-based covariance estimator of the raw data
//!   and the sample comparator;
//! - [`simulation`]: seeded scenario generators, error metrics, and
//!   Monte-Carlo experiment drivers;
//! - [`io`]: CSV matrix loading/saving and the flat key-value config
//!   format used by the CLI.

pub mod basis;
pub mod covariance;
pub mod error;
pub mod estimator;
pub mod factor;
pub mod io;
pub mod simulation;

pub use error::{FasmError, Result};
