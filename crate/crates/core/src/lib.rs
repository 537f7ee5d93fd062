//! Desk-scale laboratory for noise cross-correlation and Green's function
//! retrieval on damped wave models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod error;
pub mod noise;
pub mod propagation;
pub mod rays;
pub mod spectral;
pub mod util;
pub mod waveguide;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
