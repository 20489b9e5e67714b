//! Simultaneous nonparametric inference for non-stationary random fields on
//! a regular 2D lattice.
//!
//! The crate estimates a smoothly varying mean field with a product-kernel
//! Nadaraya–Watson smoother and calibrates simultaneous confidence regions and
//! mean-field tests with the locally weighted multiplier bootstrap. The
//! multipliers are i.i.d. standard normals pushed through symmetric square
//! roots of the row/column Toeplitz kernel matrices, so the bootstrap mimics a
//! HAC covariance of the local estimators without ever forming an
//! `nm × nm` covariance matrix.
//!
//! Module map:
//!
//! - [`grid`]: fields, positions and CSV I/O.
//! - [`kernels`]: smoothing kernel `G` and variance kernel `K`.
//! - [`toeplitz`]: square roots of Toeplitz kernel matrices (dense and FFT).
//! - [`smoother`]: Nadaraya–Watson estimates, residuals and window weights.
//! - [`hac`]: HAC covariance of window-weighted linear forms.
//! - [`bootstrap`]: the bootstrap itself, confidence regions and tests.
//! - [`bandwidth`]: cross-validation for `𝒦` and block subsampling for `ℬ`.
//! - [`simulate`]: mean fields, AR/MA noise and Monte-Carlo studies.
//! - [`rng`]: counter-based random streams.

pub mod bandwidth;
pub mod bootstrap;
pub mod error;
pub mod grid;
pub mod hac;
pub mod kernels;
pub mod rng;
pub mod simulate;
pub mod smoother;
pub mod toeplitz;

pub use error::{Error, Result};
