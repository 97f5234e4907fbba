//! Partitioned ensemble finite-element solver for reduced (low magnetic
//! Reynolds number) MHD in two dimensions.
//!
//! Velocity and pressure use Taylor-Hood P2/P1 elements, the electric
//! potential P2. All members of an ensemble share one coefficient matrix per
//! time step, so each step costs one sparse factorization and `J` solves.

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod quadrature;
pub mod spaces;
pub mod stepper;

pub use error::{Error, Result};
