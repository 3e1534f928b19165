//! Learning agents and black-box baselines for the pulse-compression
//! environment: soft actor-critic variants, a Gaussian-process Bayesian
//! optimiser and a coordinate grid search.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bo;
pub mod checkpoint;
pub mod error;
pub mod gp;
pub mod grid;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod sac;

pub use bo::{bo_run, bo_suggest, expected_improvement, BoConfig, BoHistory};
pub use checkpoint::{Checkpoint, Tensor, TensorData};
pub use error::{AgentError, Result};
pub use gp::{GpHyper, GpSurrogate};
pub use grid::{grid_search_1d, GridResult};
pub use policy::{CancelPolicy, Controller, Greedy, RandomPolicy};
pub use replay::{FrameInterner, ReplayBuffer, StoredObs, Transition};
pub use sac::{AgentKind, Batch, EnvSpec, Losses, ObsBatch, SacAgent, SacConfig};
