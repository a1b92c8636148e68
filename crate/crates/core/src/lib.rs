//! Radially symmetric finite-volume solver for the nonlocal
//! aggregation-diffusion equation
//!
//! ```text
//! u_t - eps * Lap(u) + div(u * grad(K * u)) = 0,   x in R^N, N in {1, 2, 3}
//! ```
//!
//! together with a verification harness: the concentration functionals,
//! the explicit constants of the moment argument, trajectory checks of the
//! moment inequality and the weighted concentration bound, Lebesgue/Sobolev
//! barrier checks and epsilon-scaling fits.
//!
//! Module map:
//! - [`kernel`]: interaction kernels and their attraction constants.
//! - [`radial_field`]: radial grids, densities and static functionals.
//! - [`drift`]: the nonlocal radial drift `V = (grad K * u) . x/|x|`.
//! - [`solver`]: conservative, positivity-preserving time stepping.
//! - [`analysis`]: theorem constants, inequality checks, sweeps and fits.
//! - [`config`] / [`output`]: configuration files and plot-ready outputs.

pub mod analysis;
pub mod config;
pub mod drift;
pub mod error;
pub mod kernel;
pub mod output;
pub mod quadrature;
pub mod radial_field;
pub mod solver;
mod tridiag;

pub use error::{Error, Result};
pub use kernel::KernelSpec;
pub use radial_field::{DensityField, Dimension, RadialGrid};
