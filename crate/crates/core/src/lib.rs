#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod distill;
pub mod error;
pub mod geometry;
pub mod gis;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod synth;

pub use error::{GemError, Result};
