//! Extrapolation of the vertical magnetic-field component measured on a
//! bounded planar patch to the whole plane.
//!
//! The magnetisation is assumed to live on a bounded rectangle `Q` of the
//! plane `x3 = 0`; one field component `B3` is measured on the same patch at
//! height `h`. The method eigendecomposes the truncated Poisson-kernel
//! operator on `Q`, builds a rank-`J` auxiliary operator from that basis,
//! assembles a self-adjoint 2x2 block operator, and reconstructs the field
//! anywhere in the plane from the top-`N` block eigenmodes fitted to the
//! measured data.
//!
//! Module layout mirrors the pipeline:
//! - [`grid`]: rectangles, uniform cell-center grids, quadrature.
//! - [`kernels`]: Poisson kernel, its derivatives, dense operator matrices.
//! - [`forward`]: synthetic data generation (two quadrature routes plus an
//!   independent FFT oracle) and measurement noise.
//! - [`spectral`]: truncated eigendecomposition of the K12 operator.
//! - [`extrapolator`]: auxiliary operator, block eigenproblem, extrapolant.
//! - [`harness`]: scenarios, end-to-end runs, CSV/PGM/JSON artifacts.

// LAPACK symbols come from the system netlib/OpenBLAS libraries.
extern crate netlib_src;

pub mod error;
pub mod extrapolator;
pub mod forward;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod spectral;

pub use error::{Error, Result};
