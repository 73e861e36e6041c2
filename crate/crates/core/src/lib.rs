//! Quantum correlations of two qubits coupled to a random-matrix environment.
//!
//! The crate is organised bottom-up:
//!
//! * [`states`] holds two-qubit density matrices, their X-form and block views,
//!   and the four families of initial conditions.
//! * [`quantifiers`] computes negativity, concurrence, von Neumann entropy and
//!   quantum discord.
//! * [`dos`] models the environment density of states and derives the decay
//!   rates and principal-value phases of the weak-coupling channel.
//! * [`bvh`] is the large-N, weak-coupling channel in the slow time
//!   `tau = v^2 t`, with its stationary state and Markovianity diagnostics.
//! * [`meanfield`] solves the self-consistent equations for the limiting
//!   block resolvents.
//! * [`oracle`] is the finite-N ground truth: GUE sampling, exact
//!   diagonalization, partial traces and ensemble statistics.

pub mod bvh;
pub mod dos;
mod error;
pub mod format;
pub mod meanfield;
mod optimize;
pub mod oracle;
mod quad;
pub mod quantifiers;
pub mod states;

pub use error::{Error, ErrorKind, Result};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
