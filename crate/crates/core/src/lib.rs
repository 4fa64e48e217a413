//! Structure-preserving discretizations of damped stochastic Maxwell equations.

pub mod analysis;
pub mod dg;
pub mod disc;
pub mod ensemble;
pub mod error;
pub mod fd;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod quad;
pub mod stepper;
pub mod structure;
pub mod studies;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
