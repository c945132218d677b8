//! Heralded generation of path-entangled NOON states from two type-II
//! parametric oscillators.

// Range checks are written as `!(x >= lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditioning;
pub mod cw;
pub mod error;
pub mod fock;
pub mod gaussian;
pub mod noon;
pub mod protocol;
pub mod validation;
pub mod wick;

pub use error::{Error, Result};
