//! Cascading-failure simulation for DC power networks, with optimal
//! load-shedding protection computed by primal-dual saddle-point dynamics.
//!
//! * [`netmodel`] loads MATPOWER and JSON cases into a [`PowerNetwork`].
//! * [`powerflow`] solves DC flows through the Laplacian pseudoinverse and
//!   provides flow sensitivities.
//! * [`cascade`] iterates the smooth or hard branch-tripping model.
//! * [`solver`] integrates the saddle-point dynamics of the shedding problems.
//! * [`protection`] ties detection, optimization and verification together.
//! * [`harness`] runs configured scenarios and weight sweeps and writes the
//!   output files.

pub mod cascade;
pub mod error;
pub mod harness;
pub mod netmodel;
pub mod powerflow;
pub mod protection;
pub mod solver;

pub use error::{Error, Result};
pub use netmodel::PowerNetwork;
