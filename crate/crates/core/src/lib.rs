//! Vanishing-viscosity approximation of rate-independent systems on 1D grids.
//!
//! The crate builds the viscous incremental scheme for energies of the form
//! `int beta(|u'|) + W(u) - l(t) u dx` with a weighted `L^1` dissipation, and
//! provides diagnostics for the rate-independent limit: energy balances,
//! jump detection, Finsler jump costs and arclength reparameterisations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dissipation;
pub mod energy;
pub mod error;
pub mod export;
pub mod numerics;
pub mod presets;
pub mod reparam;
pub mod solver;
pub mod transitions;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
