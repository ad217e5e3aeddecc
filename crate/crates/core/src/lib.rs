//! Diagnostics for learned rotation equivariance.
//!
//! A model `f` trained with rotation augmentation is probed through its
//! twisted predictions `T⁻¹ f(T x)`. Their group average (the twirled
//! prediction) is exactly equivariant, and the augmented loss splits into the
//! loss of that average plus a variance term that vanishes only for
//! equivariant models. This crate measures both terms, their finite-sample
//! estimates, their gradients, and the Hessian structure around them.

pub mod analysis;
pub mod error;
pub mod group;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod rng;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
