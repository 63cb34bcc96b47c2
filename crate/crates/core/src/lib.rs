// Negated comparisons reject NaN along with out-of-range values; index loops
// mirror the matrix notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod control;
pub mod error;
pub mod geometry;
pub mod phy;
pub mod predictors;
pub mod qoe;
pub mod sim;

pub use error::{CoreError, Result};
