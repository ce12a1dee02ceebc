//! Time-varying-parameter multivariate autoregressive index (MAI) models with
//! EWMA stochastic volatility.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod linalg;
pub mod mai;
pub mod pool;
pub mod report;
pub mod simulation;
pub use error::{Error, Result};
