#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod matkit;
pub mod models;
pub mod quad;
pub mod repro;
pub mod rng;
pub mod sga;
pub mod sme;

pub use error::{Error, Result};
