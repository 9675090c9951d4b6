//! M-PSK MIMO detection through a sparse quadratic programming relaxation.
//!
//! The detection problem min ‖Hx − r‖² over M-PSK vectors x is lifted to a
//! simplex-constrained quadratic program in one-hot assignment blocks whose
//! continuous relaxation shares its global minimizers with the discrete
//! problem. The main detector solves the relaxation with a quadratic-penalty
//! outer loop around a projected-Newton inner solver, then rounds the
//! near-stationary point blockwise along the gradient. Baseline detectors
//! (MMSE, gradient projection, exhaustive maximum likelihood, and the
//! no-interference bound), recovery-condition diagnostics, and a seeded
//! Monte-Carlo benchmark harness round out the crate.

pub mod detectors;
pub mod error;
pub mod formulation;
pub mod instance;
pub mod model;
pub mod rounding;
pub mod solver;

pub use error::{Error, Result};
