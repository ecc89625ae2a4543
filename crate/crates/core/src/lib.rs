#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod canonical;
pub mod classifier;
pub mod distance_field;
pub mod elm;
pub mod error;
pub mod geometry;
pub mod hash;
pub mod pipeline;

pub use error::{Error, Result};
