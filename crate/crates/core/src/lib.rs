//! Numerical laboratory for mean-field games with common noise.
//!
//! The crate covers the N-player system under feedback controls, two solvers
//! for the limiting McKean–Vlasov SPDE (direct Itô stepping and stochastic
//! characteristics), first and second sensitivities with respect to the
//! initial measure, the exact generator decomposition on moment functionals,
//! conditional HJB and MFG fixed points, and the experiment harness.

pub mod characteristics;
pub mod error;
pub mod generators;
pub mod grid;
pub mod harness;
pub mod interp;
pub mod mfg;
pub mod model;
pub mod particles;
pub mod policy;
pub mod rng;
pub mod sensitivity;
pub mod spde;
pub mod stats;

pub use error::{Error, Result};
