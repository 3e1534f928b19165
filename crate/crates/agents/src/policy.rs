//! Controllers that map an observation to an action in `[-1, 1]^d`.

use pulsectl_core::env::Observation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::sac::SacAgent;

pub trait Controller {
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>>;
}

/// Steers the stretcher back to the box centre (`-psi_c`), i.e. the
/// dispersion setting that cancels the compressor at zero B-integral.
#[derive(Debug, Clone, Copy)]
pub struct CancelPolicy {
    pub alpha: f64,
}

impl Controller for CancelPolicy {
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        // One unit of action moves the normalised coefficient by 2 * alpha.
        Ok(obs.psi_norm.iter().map(|p| (-p / (2.0 * self.alpha)).clamp(-1.0, 1.0)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Controller for RandomPolicy {
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(obs.psi_norm.iter().map(|_| self.rng.random_range(-1.0..=1.0)).collect())
    }
}

/// Deterministic (mean) actions of a trained agent.
#[derive(Debug, Clone, Copy)]
pub struct Greedy<'a>(pub &'a SacAgent);

impl Controller for Greedy<'_> {
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        // The RNG is unused for deterministic actions.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.0.act_with(obs, true, &mut rng)
    }
}
