//! Particle and finite-volume solvers for the linear voltage-conductance
//! kinetic neuron model, with diagnostics for its exponential ergodicity.
//!
//! * [`model`]: parameters, the velocity field `J`, Harris constants.
//! * [`particle`]: Monte Carlo simulation of the jump-reset SDE.
//! * [`fpsolver`]: finite-volume Fokker-Planck solver and steady state.
//! * [`ergodicity`]: weighted TV norm, Lyapunov and minorization probes,
//!   convergence-rate fits.
//! * [`validate`]: cross-checks between the two solvers.
//! * [`io`]: CSV and key-value artifacts.

// `!(x > 0.0)` rejects NaN together with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::len_without_is_empty)]

pub mod ergodicity;
pub mod error;
pub mod field;
pub mod fpsolver;
pub mod io;
pub mod model;
pub mod particle;
pub mod validate;

pub use error::{Error, Result};
pub use field::{DensityField, GridSpec};
pub use model::{harris_constants, harris_constants_default, HarrisConstants, ModelParams};
pub use particle::{ParticleState, SimConfig, SpikeRecord};
