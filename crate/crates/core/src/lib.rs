// `!(v > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod hawkes;
pub mod hjb;
pub mod model;
pub mod neural;
pub mod rl;

pub use error::{Error, Result};
pub use model::{ClaimDist, ModelParams, State};
