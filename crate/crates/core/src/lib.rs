//! Inelastic hard-sphere granular gases: collision kinematics, deterministic
//! evaluation of the collision operator, a no-time-counter DSMC integrator in
//! original and self-similar variables, and the observables used to check
//! cooling and tail behaviour.

pub mod dsmc;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod observables;
pub mod operator;
pub mod quadrature;
pub mod rescale;
pub mod vecn;

pub use error::{Error, Result};
