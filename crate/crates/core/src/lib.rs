//! Consensus of linear agents over time-varying interaction graphs.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod csvfmt;
pub mod design;
pub mod error;
pub mod graphdyn;
pub mod linalg;
pub mod lti;
pub mod pipeline;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use nalgebra;
