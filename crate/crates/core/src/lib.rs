#![no_std]
// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
#![doc = include_str!("../README.md")]

extern crate alloc;

pub mod adaptive;
pub mod aggregate;
pub mod error;
pub mod fast;
pub mod graph;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod refresh;
pub mod registration;
pub mod rw;
pub mod sparse;

pub use error::{Error, Result};
