//! Tube-based model predictive safety certification for linear systems.

// `!(a <= b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convex;
pub mod enlargement;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod harness;
pub mod linsys;
pub mod mpsc;
pub mod scenario;

pub use error::{Error, Result};
