//! Inference-time label-preserving target projection for domain generalization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod generative;
pub mod metric;
pub mod numerics;
pub mod pipeline;
pub mod projection;
pub mod rng;

pub use error::{Error, Result};
