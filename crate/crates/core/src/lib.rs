// Negated float comparisons are used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod des;
pub mod error;
pub mod fluid;
pub mod harness;
pub mod hybrid;
pub mod moments;
pub mod red;
pub mod rng;
pub mod scenario;
pub mod series;
pub mod surrogate;
pub mod tcp;

pub use error::{Error, Result};
