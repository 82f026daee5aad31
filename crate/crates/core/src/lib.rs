//! Simulation and verification toolkit for dilute suspensions of rigid,
//! possibly self-propelled particles in Stokes flow.
//!
//! * [`tensor`]: 3-d tensor algebra and the Stokeslet kernel.
//! * [`particle`]: single-particle effective coefficients.
//! * [`flow`]: ambient forcing and its Stokes velocity.
//! * [`sim`]: N-particle dynamics under the dilute velocity expansions.
//! * [`kinetic`]: Doi-type kinetic model solved along weighted characteristics.
//! * [`harness`]: experiment configuration, particle-vs-kinetic comparisons and rate fits.
//!
//! Wasserstein metrics live in the companion `suspension-transport` crate and
//! are re-exported as [`transport`].

pub mod error;
pub mod flow;
pub mod harness;
pub mod kinetic;
pub mod particle;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
pub use suspension_transport as transport;
