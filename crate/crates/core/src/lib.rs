//! Pump-chain pulse simulation and the pulse-shaping control environment.
//!
//! The crate is organised bottom-up:
//!
//! * [`pulse`] holds spectral/temporal field representations, dispersion
//!   phases and pulse metrics.
//! * [`chain`] is the chirped-pulse-amplification forward model
//!   (stretcher, nonlinear amplifier, compressor).
//! * [`frog`] synthesizes SHG FROG traces and renders them as images.
//! * [`env`] is the episodic latent-dynamics environment built on the above.
//! * [`domain_rand`] provides distributions over the B-integral and the
//!   entropy-maximizing curriculum.
//!
//! Data-parallel inner loops go through [`exec::Exec`], which uses rayon when
//! the `parallel` feature is enabled and runs sequentially otherwise.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod domain_rand;
pub mod env;
pub mod error;
pub mod exec;
pub mod frog;
pub mod pulse;

pub use chain::{ChainConfig, LatentDynamics, PumpChain};
pub use domain_rand::{CurriculumConfig, CurriculumState, DrDistribution};
pub use env::{ControlBounds, EnvConfig, LaserEnv, Observation, StepInfo, StepResult};
pub use error::{Error, Result};
pub use exec::Exec;
pub use frog::{FrogConfig, FrogTrace};
pub use pulse::{DispersionCoeffs, FrequencyGrid, PhaseArray, SpectralField, TemporalField};

/// Speed of light in nm/fs.
pub const SPEED_OF_LIGHT_NM_PER_FS: f64 = 299.792_458;

/// Central angular frequency (rad/fs) for a vacuum wavelength in nm.
pub fn omega_from_wavelength_nm(lambda_nm: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_NM_PER_FS / lambda_nm
}
