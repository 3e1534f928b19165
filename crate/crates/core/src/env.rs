//! Episodic pulse-shaping environment with latent B-integral dynamics.
//!
//! Each episode samples a starting stretcher setting around `-psi_c` and a
//! B-integral from the configured distribution. Actions in `[-1, 1]` move each
//! controlled coefficient by at most `alpha * c_i` per step; the reward is the
//! output peak intensity relative to the transform limit, clipped to `[0, 1]`.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chain::{ChainConfig, LatentDynamics, PumpChain};
use crate::domain_rand::DrDistribution;
use crate::error::{Error, Result};
use crate::frog::{FrogConfig, FrogSynth, FrogTrace};
use crate::pulse::DispersionCoeffs;

/// One of the three controllable dispersion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coefficient {
    Gdd,
    Tod,
    Fod,
}

impl Coefficient {
    pub const ALL: [Coefficient; 3] = [Coefficient::Gdd, Coefficient::Tod, Coefficient::Fod];

    pub fn index(self) -> usize {
        match self {
            Coefficient::Gdd => 0,
            Coefficient::Tod => 1,
            Coefficient::Fod => 2,
        }
    }
}

/// Per-coefficient box `[min, max]` and the per-step fraction `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub alpha: f64,
}

impl ControlBounds {
    pub fn new(min: [f64; 3], max: [f64; 3], alpha: f64) -> Result<Self> {
        let b = Self { min, max, alpha };
        b.validate()?;
        Ok(b)
    }

    /// Box of half-width `half_range` centred on `centre`.
    pub fn centred(centre: DispersionCoeffs, half_range: DispersionCoeffs, alpha: f64) -> Result<Self> {
        let c = centre.to_array();
        let h = half_range.to_array();
        Self::new([c[0] - h[0], c[1] - h[1], c[2] - h[2]], [c[0] + h[0], c[1] + h[1], c[2] + h[2]], alpha)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i]) {
                return Err(Error::config(format!(
                    "control bound {i}: need min < max, got [{}, {}]",
                    self.min[i], self.max[i]
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Total range `c_i = |max_i - min_i|`.
    pub fn range(&self, i: usize) -> f64 {
        (self.max[i] - self.min[i]).abs()
    }

    /// Largest allowed per-step change `alpha * c_i`.
    pub fn max_step(&self, i: usize) -> f64 {
        self.alpha * self.range(i)
    }

    pub fn centre(&self, i: usize) -> f64 {
        0.5 * (self.min[i] + self.max[i])
    }

    /// Affine map `[min_i, max_i] -> [-1, 1]`.
    pub fn normalize(&self, i: usize, value: f64) -> f64 {
        2.0 * (value - self.min[i]) / (self.max[i] - self.min[i]) - 1.0
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, i: usize, value: f64) -> f64 {
        self.min[i] + 0.5 * (value + 1.0) * (self.max[i] - self.min[i])
    }

    pub fn contains(&self, psi: &[f64; 3]) -> bool {
        (0..3).all(|i| psi[i] >= self.min[i] && psi[i] <= self.max[i])
    }

    /// Move `current` by `action * alpha * c_i`, clipped to the box. The
    /// realised change never exceeds `max_step(i)` in floating point.
    pub fn apply(&self, i: usize, current: f64, action: f64) -> f64 {
        let limit = self.max_step(i);
        let mut next = (current + action.clamp(-1.0, 1.0) * limit).clamp(self.min[i], self.max[i]);
        while (next - current).abs() > limit {
            next = step_toward(next, current);
        }
        next
    }
}

/// The adjacent float from `x` in the direction of `target`.
fn step_toward(x: f64, target: f64) -> f64 {
    if x == target {
        return x;
    }
    let bits = x.to_bits();
    let up = (target > x) == (x >= 0.0);

    if x == 0.0 {
        f64::from_bits(1).copysign(target - x)
    } else if up {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub chain: ChainConfig,
    pub frog: FrogConfig,
    /// Bounds are `-psi_c +- half_range`.
    pub half_range: DispersionCoeffs,
    /// Per-step fraction of the control range.
    pub alpha: f64,
    pub horizon: usize,
    /// Discount factor (consumed by agents).
    pub gamma: f64,
    /// Initial-state std per coefficient as a fraction of the half range.
    pub init_std_fraction: f64,
    pub frame_stack: usize,
    /// Coefficients exposed to the agent; the rest stay at `-psi_c`.
    pub controlled: Vec<Coefficient>,
    /// Compute FROG traces for observations. Vector-only agents may turn
    /// this off; [`LaserEnv::render`] still works.
    pub observe_traces: bool,
    /// Distribution of the B-integral per episode.
    pub latent: DrDistribution,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            frog: FrogConfig::default(),
            half_range: DispersionCoeffs::new(5.0e4, 4.0e5, 2.0e6),
            alpha: 0.1,
            horizon: 20,
            gamma: 0.9,
            init_std_fraction: 0.2,
            frame_stack: 5,
            controlled: Coefficient::ALL.to_vec(),
            observe_traces: true,
            latent: DrDistribution::Fixed { value: 0.0 },
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        self.frog.validate()?;
        self.bounds()?;
        self.latent.validate()?;
        if self.horizon < 1 {
            return Err(Error::config("horizon must be >= 1"));
        }
        if self.frame_stack < 1 {
            return Err(Error::config("frame_stack must be >= 1"));
        }
        if !(self.init_std_fraction > 0.0) {
            return Err(Error::config("init_std_fraction must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1]"));
        }
        if self.controlled.is_empty() {
            return Err(Error::config("at least one coefficient must be controlled"));
        }
        let mut seen = [false; 3];
        for c in &self.controlled {
            if std::mem::replace(&mut seen[c.index()], true) {
                return Err(Error::config(format!("coefficient {c:?} listed twice")));
            }
        }
        let (lo, _) = self.latent.support();
        if lo < 0.0 {
            return Err(Error::config("B-integral distribution must have non-negative support"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<ControlBounds> {
        ControlBounds::centred(-self.chain.compressor, self.half_range, self.alpha)
    }

    /// Indices (0 = GDD, 1 = TOD, 2 = FOD) of controlled coefficients, ascending.
    pub fn active(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.controlled.iter().map(|c| c.index()).collect();
        idx.sort_unstable();
        idx
    }
}

/// Agent-visible state: stacked traces (oldest first), normalised controlled
/// coefficients and the previous action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub traces: Vec<FrogTrace>,
    pub psi_norm: Vec<f64>,
    pub prev_action: Vec<f64>,
}

impl Observation {
    /// `psi_norm` followed by `prev_action`.
    pub fn vector(&self) -> Vec<f64> {
        self.psi_norm.iter().chain(&self.prev_action).copied().collect()
    }

    pub fn newest_trace(&self) -> Option<&FrogTrace> {
        self.traces.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Unclipped peak intensity over the TL reference.
    pub intensity_ratio: f64,
    /// Output pulse FWHM in fs, when measurable.
    pub fwhm: Option<f64>,
    /// Privileged latent B-integral.
    pub latent_b: f64,
    /// Steps taken so far in the episode (1..=T after a step).
    pub step: usize,
    pub psi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// Episode finished by the horizon.
    pub done: bool,
    pub info: StepInfo,
}

impl StepResult {
    /// No physical terminal states exist; episodes only end by time limit.
    pub fn terminated(&self) -> bool {
        false
    }

    pub fn truncated(&self) -> bool {
        self.done
    }
}

/// Mutable per-episode state. Serialisable so training can be resumed
/// mid-episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub psi: [f64; 3],
    pub prev_action: Vec<f64>,
    pub dynamics: LatentDynamics,
    pub t: usize,
    pub stack: VecDeque<FrogTrace>,
    pub ratio: f64,
    pub fwhm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LaserEnv {
    config: EnvConfig,
    chain: Arc<PumpChain>,
    synth: Arc<FrogSynth>,
    bounds: ControlBounds,
    active: Vec<usize>,
    latent: DrDistribution,
    episode: Option<EpisodeState>,
}

impl LaserEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let chain = Arc::new(PumpChain::new(config.chain.clone())?);
        let synth = Arc::new(FrogSynth::new(chain.grid(), config.frog.clone())?);
        Ok(Self::from_parts(config, chain, synth))
    }

    /// Build an environment sharing an existing chain and synthesiser.
    pub fn from_parts(config: EnvConfig, chain: Arc<PumpChain>, synth: Arc<FrogSynth>) -> Self {
        let bounds = config.bounds().expect("validated config");
        let active = config.active();
        let latent = config.latent;
        Self { config, chain, synth, bounds, active, latent, episode: None }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn chain(&self) -> &Arc<PumpChain> {
        &self.chain
    }

    pub fn synth(&self) -> &Arc<FrogSynth> {
        &self.synth
    }

    pub fn bounds(&self) -> &ControlBounds {
        &self.bounds
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn action_dim(&self) -> usize {
        self.active.len()
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn latent_distribution(&self) -> DrDistribution {
        self.latent
    }

    /// Replace the distribution B is drawn from at subsequent resets.
    pub fn set_latent_distribution(&mut self, dist: DrDistribution) -> Result<()> {
        dist.validate()?;
        self.latent = dist;
        Ok(())
    }

    pub fn episode(&self) -> Option<&EpisodeState> {
        self.episode.as_ref()
    }

    pub fn restore_episode(&mut self, state: Option<EpisodeState>) {
        self.episode = state;
    }

    /// Full coefficient vector from a normalised vector over controlled
    /// coefficients; uncontrolled ones sit at the box centre.
    pub fn psi_from_norm(&self, psi_norm: &[f64]) -> [f64; 3] {
        let mut psi = [0.0; 3];
        for i in 0..3 {
            psi[i] = self.bounds.centre(i);
        }
        for (k, &i) in self.active.iter().enumerate() {
            psi[i] = self.bounds.denormalize(i, psi_norm[k]);
        }
        psi
    }

    pub fn psi_to_norm(&self, psi: &[f64; 3]) -> Vec<f64> {
        self.active.iter().map(|&i| self.bounds.normalize(i, psi[i])).collect()
    }

    /// Start a new episode. The episode is a deterministic function of `seed`
    /// and (unless overridden) the current latent distribution.
    pub fn reset(&mut self, seed: u64, latent_override: Option<LatentDynamics>) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = [0.0; 3];
        for i in 0..3 {
            psi[i] = self.bounds.centre(i);
        }
        for &i in &self.active {
            let std = self.config.init_std_fraction * self.bounds.range(i) / 2.0;
            let normal = Normal::new(self.bounds.centre(i), std).map_err(|e| Error::config(e.to_string()))?;
            psi[i] = loop {
                let v = normal.sample(&mut rng);
                if v >= self.bounds.min[i] && v <= self.bounds.max[i] {
                    break v;
                }
            };
        }
        let dynamics = match latent_override {
            Some(d) => {
                d.validate()?;
                d
            }
            None => self.chain.dynamics(self.latent.sample(&mut rng))?,
        };
        let (ratio, fwhm, trace) = self.evaluate(&psi, dynamics)?;
        let stack: VecDeque<FrogTrace> = match trace {
            Some(t) => std::iter::repeat_n(t, self.config.frame_stack).collect(),
            None => VecDeque::new(),
        };
        self.episode =
            Some(EpisodeState { psi, prev_action: vec![0.0; self.active.len()], dynamics, t: 0, stack, ratio, fwhm });
        Ok(self.observation())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let horizon = self.config.horizon;
        let ep = self.episode.as_ref().ok_or_else(|| Error::Usage("step called before reset".into()))?;
        if ep.t >= horizon {
            return Err(Error::Usage("step called after the episode ended".into()));
        }
        if action.len() != self.active.len() {
            return Err(Error::Usage(format!(
                "action has {} components, expected {}",
                action.len(),
                self.active.len()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Usage("action contains non-finite values".into()));
        }
        let mut psi = ep.psi;
        let dynamics = ep.dynamics;
        for (k, &i) in self.active.iter().enumerate() {
            psi[i] = self.bounds.apply(i, psi[i], action[k]);
        }
        let (ratio, fwhm, trace) = self.evaluate(&psi, dynamics)?;
        let frame_stack = self.config.frame_stack;
        let ep = self.episode.as_mut().expect("checked above");
        ep.psi = psi;
        ep.prev_action = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        ep.t += 1;
        ep.ratio = ratio;
        ep.fwhm = fwhm;
        if let Some(t) = trace {
            ep.stack.push_back(t);
            while ep.stack.len() > frame_stack {
                ep.stack.pop_front();
            }
        }
        let t = ep.t;
        Ok(StepResult {
            observation: self.observation(),
            reward: ratio.clamp(0.0, 1.0),
            done: t == horizon,
            info: StepInfo { intensity_ratio: ratio, fwhm, latent_b: dynamics.b_integral, step: t, psi },
        })
    }

    /// Most recent trace; computed on demand when observations carry none.
    pub fn render(&self) -> Result<FrogTrace> {
        let ep = self.episode.as_ref().ok_or_else(|| Error::Usage("render called before reset".into()))?;
        if let Some(t) = ep.stack.back() {
            return Ok(t.clone());
        }
        let field = self.chain.propagate(DispersionCoeffs::from_array(ep.psi), ep.dynamics)?;
        self.synth.trace(&field)
    }

    /// Current reward-equivalent ratio (clipped), without stepping.
    pub fn current_reward(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.ratio.clamp(0.0, 1.0))
    }

    /// Observation of the current state, if an episode is active.
    pub fn current_observation(&self) -> Option<Observation> {
        self.episode.as_ref().map(|_| self.observation())
    }

    fn observation(&self) -> Observation {
        let ep = self.episode.as_ref().expect("episode active");
        Observation {
            traces: ep.stack.iter().cloned().collect(),
            psi_norm: self.psi_to_norm(&ep.psi),
            prev_action: ep.prev_action.clone(),
        }
    }

    fn evaluate(&self, psi: &[f64; 3], dynamics: LatentDynamics) -> Result<(f64, Option<f64>, Option<FrogTrace>)> {
        let field = self.chain.propagate(DispersionCoeffs::from_array(*psi), dynamics)?;
        let ratio = field.peak_intensity() / self.chain.tl_reference();
        let fwhm = field.fwhm().ok();
        let trace = if self.config.observe_traces { Some(self.synth.trace(&field)?) } else { None };
        Ok((ratio, fwhm, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn env(latent: DrDistribution) -> LaserEnv {
        LaserEnv::new(EnvConfig { latent, ..Default::default() }).unwrap()
    }

    #[test]
    fn normalizers_are_affine_inverses() {
        let b = EnvConfig::default().bounds().unwrap();
        for i in 0..3 {
            assert_eq!(b.normalize(i, b.min[i]), -1.0);
            assert_eq!(b.normalize(i, b.max[i]), 1.0);
            assert!(b.normalize(i, (b.min[i] + b.max[i]) / 2.0).abs() < 1e-15);
            for v in [-1.0, -0.3, 0.0, 0.77, 1.0] {
                let back = b.normalize(i, b.denormalize(i, v));
                assert!((back - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bounds_validation() {
        assert!(ControlBounds::new([0.0; 3], [1.0; 3], 0.0).is_err());
        assert!(ControlBounds::new([0.0; 3], [1.0; 3], 1.5).is_err());
        assert!(ControlBounds::new([1.0, 0.0, 0.0], [0.0, 1.0, 1.0], 0.1).is_err());
        let cfg = EnvConfig { horizon: 0, ..Default::default() };
        assert!(LaserEnv::new(cfg).is_err());
        let cfg = EnvConfig { controlled: vec![], ..Default::default() };
        assert!(LaserEnv::new(cfg).is_err());
    }

    #[test]
    fn apply_never_exceeds_step_limit() {
        let b = EnvConfig::default().bounds().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100_000 {
            let i = rng.random_range(0..3);
            let cur = b.min[i] + rng.random::<f64>() * b.range(i);
            let next = b.apply(i, cur, rng.random_range(-1.5..1.5));
            assert!((next - cur).abs() <= b.max_step(i));
            assert!(next >= b.min[i] && next <= b.max[i]);
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let mut e = env(DrDistribution::Uniform { lo: 1.0, hi: 3.0 });
        let a = e.reset(42, None).unwrap();
        let b_a = e.episode().unwrap().dynamics.b_integral;
        let b = e.reset(42, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(b_a, e.episode().unwrap().dynamics.b_integral);
        assert_eq!(a.traces.len(), 5);
        assert!(a.traces.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(a.prev_action, vec![0.0; 3]);
    }

    #[test]
    fn latent_override_reported() {
        let mut e = env(DrDistribution::Fixed { value: 0.5 });
        let dyn_ = e.chain().dynamics(2.17).unwrap();
        e.reset(1, Some(dyn_)).unwrap();
        for _ in 0..3 {
            let r = e.step(&[0.1, -0.2, 0.3]).unwrap();
            assert_eq!(r.info.latent_b, 2.17);
        }
    }

    #[test]
    fn zero_action_keeps_psi_and_reward() {
        let mut e = env(DrDistribution::Fixed { value: 1.0 });
        e.reset(3, None).unwrap();
        let psi0 = e.episode().unwrap().psi;
        let r0 = e.current_reward().unwrap();
        let r = e.step(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.info.psi, psi0);
        assert_eq!(r.reward, r0);
    }

    #[test]
    fn clipping_at_upper_bound() {
        let mut e = env(DrDistribution::Fixed { value: 0.0 });
        e.reset(5, None).unwrap();
        for _ in 0..15 {
            e.step(&[1.0, 1.0, 1.0]).unwrap();
        }
        let max = e.bounds().max;
        assert_eq!(e.episode().unwrap().psi, max);
        let r = e.step(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.info.psi, max);
    }

    #[test]
    fn cancellation_policy_reaches_transform_limit() {
        let mut e = env(DrDistribution::Fixed { value: 0.0 });
        let mut obs = e.reset(9, None).unwrap();
        let alpha = e.bounds().alpha;
        let mut last = 0.0;
        for _ in 0..20 {
            let a: Vec<f64> = obs.psi_norm.iter().map(|p| (-p / (2.0 * alpha)).clamp(-1.0, 1.0)).collect();
            let r = e.step(&a).unwrap();
            obs = r.observation;
            last = r.reward;
        }
        assert!(last >= 0.999, "{last}");
    }

    #[test]
    fn episode_length_and_usage_errors() {
        let mut e = env(DrDistribution::Fixed { value: 2.0 });
        assert!(e.step(&[0.0; 3]).is_err());
        e.reset(0, None).unwrap();
        assert!(e.step(&[0.0; 2]).is_err());
        assert!(e.step(&[f64::NAN, 0.0, 0.0]).is_err());
        for t in 1..=20 {
            let r = e.step(&[0.5, -0.5, 0.0]).unwrap();
            assert_eq!(r.done, t == 20);
            assert_eq!(r.info.step, t);
            assert!(!r.terminated());
        }
        assert!(matches!(e.step(&[0.0; 3]), Err(Error::Usage(_))));
    }

    #[test]
    fn render_matches_newest_frame() {
        let mut e = env(DrDistribution::Fixed { value: 1.0 });
        let obs = e.reset(2, None).unwrap();
        assert_eq!(&e.render().unwrap(), obs.newest_trace().unwrap());
        let r = e.step(&[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(&e.render().unwrap(), r.observation.newest_trace().unwrap());
        assert_eq!(r.observation.traces.len(), 5);
    }

    #[test]
    fn vector_only_mode_still_renders() {
        let cfg = EnvConfig { observe_traces: false, ..Default::default() };
        let mut with = LaserEnv::new(EnvConfig::default()).unwrap();
        let mut without = LaserEnv::new(cfg).unwrap();
        let a = with.reset(4, None).unwrap();
        let b = without.reset(4, None).unwrap();
        assert!(b.traces.is_empty());
        assert_eq!(a.psi_norm, b.psi_norm);
        assert_eq!(without.render().unwrap(), with.render().unwrap());
    }

    #[test]
    fn single_coefficient_variant() {
        let cfg = EnvConfig { controlled: vec![Coefficient::Gdd], observe_traces: false, ..Default::default() };
        let mut e = LaserEnv::new(cfg).unwrap();
        let obs = e.reset(1, None).unwrap();
        assert_eq!(e.action_dim(), 1);
        assert_eq!(obs.vector().len(), 2);
        let centre = e.bounds().centre(1);
        let r = e.step(&[1.0]).unwrap();
        assert_eq!(r.info.psi[1], centre);
    }
}
