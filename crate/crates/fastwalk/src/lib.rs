//! Files, command line, benchmarks and the HTTP session API around
//! [`fastwalk_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use fastwalk_core as core;

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod pack;
pub mod seeds;
pub mod segment;
pub mod service;

pub use error::{Error, Result};
