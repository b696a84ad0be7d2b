//! Bayesian optimization with heavy-tailed reward noise.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environments;
pub mod error;
pub mod features;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod policies;
pub mod posterior;
pub mod truncation;

pub use error::{Error, Result};
