//! Training, evaluation, sweeps, baselines and rendering for the pulse
//! compression environment, plus the `pulsectl` command line.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod output;
pub mod render;
pub mod seeds;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
