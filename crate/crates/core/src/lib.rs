// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod mixing;
pub mod net;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod sde;
pub mod signal;
pub mod verify;

pub use error::{Error, Result};
