//! Numerical toolkit for Gaussian thermostat flows on surfaces with boundary.
//!
//! The crate simulates the isokinetic (Gaussian thermostat) flow on the unit
//! sphere bundle of a disk with a conformal metric, solves non-abelian
//! transport equations along thermostat geodesics, computes attenuated ray
//! transforms of tensor fields, and verifies the operator identities, energy
//! identities and the Carleman-type mode inequality that govern the
//! injectivity theory of these transforms.

pub mod config;
pub mod error;
pub mod fiber;
pub mod flow;
pub mod inversion;
pub mod ode;
pub mod poly;
pub mod scene;
pub mod transport;

pub use error::{Error, Result};
pub use scene::Scene;

use num_complex::Complex64;

/// Dense complex matrix used for bundle ranks n <= 4 (n^2 <= 16 after
/// pseudolinearization).
pub type CMat = nalgebra::DMatrix<Complex64>;
/// Dense complex vector.
pub type CVec = nalgebra::DVector<Complex64>;

/// Identity matrix of the given rank.
pub fn cmat_id(n: usize) -> CMat {
    CMat::identity(n, n)
}
