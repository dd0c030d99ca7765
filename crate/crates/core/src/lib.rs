// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over several parallel coordinate arrays read better than zips.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod extension;
pub mod fields;
pub mod geometry;
pub mod korn;
pub mod nonlocal;
pub mod numerics;
pub mod quadrature;
pub mod seminorms;

pub use error::{Error, Result};
