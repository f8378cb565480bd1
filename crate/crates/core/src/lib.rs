#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod allocation;
pub mod cli;
pub mod concentration;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod simulation;

pub use error::{Error, Result};
