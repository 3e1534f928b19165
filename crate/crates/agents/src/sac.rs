//! Soft actor-critic on stacked trace images, with an optional privileged
//! critic input (the latent B-integral) and a vector-only variant.
//!
//! Pixel agents share one convolutional encoder between the twin critics; it
//! is trained by the critic loss only, and the actor reads its output
//! detached. The actor is a tanh-squashed Gaussian whose log standard
//! deviation is squashed into `[log_std_min, log_std_max]`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use pulsectl_core::env::{LaserEnv, Observation};
use pulsectl_core::frog::quantize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{AgentError, Result};
use crate::nn::{polyak, Adam, ConvEncoder, ConvSpec, Mlp, Params};
use crate::replay::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    /// Pixel observations, symmetric critic.
    Sac,
    /// Pixel observations; the critic also sees the normalised latent B.
    AsymmetricSac,
    /// Coefficient and previous-action vector only.
    MiniSac,
}

impl AgentKind {
    pub fn uses_pixels(self) -> bool {
        !matches!(self, AgentKind::MiniSac)
    }

    pub fn asymmetric(self) -> bool {
        matches!(self, AgentKind::AsymmetricSac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub kind: AgentKind,
    /// Hidden widths of the actor and critic trunks.
    pub hidden: Vec<usize>,
    pub conv_filters: usize,
    pub conv_layers: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub embed_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub tau: f64,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    pub init_temperature: f64,
    /// Uniformly random actions before learning starts.
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Range used to normalise B for the asymmetric critic.
    pub latent_range: [f64; 2],
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::AsymmetricSac,
            hidden: vec![256, 256],
            conv_filters: 32,
            conv_layers: 3,
            conv_kernel: 3,
            conv_stride: 2,
            embed_dim: 128,
            lr: 3e-4,
            batch_size: 256,
            replay_capacity: 100_000,
            tau: 0.005,
            target_entropy: None,
            init_temperature: 0.1,
            warmup_steps: 2000,
            updates_per_step: 1,
            log_std_min: -5.0,
            log_std_max: 2.0,
            latent_range: [1.0, 3.5],
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch size and replay capacity must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.init_temperature > 0.0 && self.init_temperature.is_finite()) {
            return bad("initial temperature must be positive");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        if !(self.latent_range[0] < self.latent_range[1]) {
            return bad("latent_range must be increasing");
        }
        if self.target_entropy.is_some_and(|h| !h.is_finite()) {
            return bad("target entropy must be finite");
        }
        if self.kind.uses_pixels() && (self.conv_layers == 0 || self.conv_filters == 0 || self.embed_dim == 0) {
            return bad("pixel agents need at least one conv layer, filter and embedding unit");
        }
        Ok(())
    }
}

/// Environment-side dimensions an agent is built for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub frames: usize,
    pub side: usize,
    pub vector_dim: usize,
    pub action_dim: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn from_env(env: &LaserEnv) -> Self {
        let cfg = env.config();
        Self {
            frames: cfg.frame_stack,
            side: cfg.frog.image_size,
            vector_dim: 2 * env.action_dim(),
            action_dim: env.action_dim(),
            gamma: cfg.gamma,
        }
    }
}

/// Network inputs for a batch of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    /// `(batch, side * side * frames)` in NHWC order, or `None` for vector agents.
    pub pixels: Option<Array2<f64>>,
    pub vector: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: ObsBatch,
    pub action: Array2<f64>,
    pub reward: Array1<f64>,
    pub next_obs: ObsBatch,
    pub done: Array1<f64>,
    pub latent: Array1<f64>,
}

fn pixels_nhwc(frames: &[&[u8]], side: usize, out: &mut [f64]) {
    let c = frames.len();
    for (ch, f) in frames.iter().enumerate() {
        for (p, &v) in f.iter().enumerate().take(side * side) {
            out[p * c + ch] = v as f64 / 255.0;
        }
    }
}

impl ObsBatch {
    /// Single observation with frames quantised exactly as in replay.
    pub fn from_observation(obs: &Observation, spec: &EnvSpec, pixels: bool) -> Result<Self> {
        let vector = Array2::from_shape_vec((1, spec.vector_dim), obs.vector())
            .map_err(|_| AgentError::Config("observation vector width does not match the agent".into()))?;
        let pixels = if pixels {
            if obs.traces.len() != spec.frames || obs.traces.iter().any(|t| t.size != spec.side) {
                return Err(AgentError::Config(format!(
                    "agent expects {} frames of side {}, observation has {}",
                    spec.frames,
                    spec.side,
                    obs.traces.len()
                )));
            }
            let bytes: Vec<Vec<u8>> =
                obs.traces.iter().map(|t| t.pixels.iter().map(|&v| quantize(v)).collect()).collect();
            let refs: Vec<&[u8]> = bytes.iter().map(|b| &b[..]).collect();
            let mut out = vec![0.0; spec.side * spec.side * spec.frames];
            pixels_nhwc(&refs, spec.side, &mut out);
            Some(Array2::from_shape_vec((1, out.len()), out).expect("consistent shape"))
        } else {
            None
        };
        Ok(Self { pixels, vector })
    }

    fn from_stored<'a>(
        items: impl Iterator<Item = &'a crate::replay::StoredObs> + Clone,
        n: usize,
        spec: &EnvSpec,
        pixels: bool,
    ) -> Self {
        let mut vector = Array2::zeros((n, spec.vector_dim));
        for (i, o) in items.clone().enumerate() {
            vector.row_mut(i).assign(&ndarray::ArrayView1::from(&o.vector[..]));
        }
        let pixels = pixels.then(|| {
            let w = spec.side * spec.side * spec.frames;
            let mut px = vec![0.0; n * w];
            for (i, o) in items.enumerate() {
                let refs: Vec<&[u8]> = o.frames.iter().map(|f| &f[..]).collect();
                pixels_nhwc(&refs, spec.side, &mut px[i * w..(i + 1) * w]);
            }
            Array2::from_shape_vec((n, w), px).expect("consistent shape")
        });
        Self { pixels, vector }
    }
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition], spec: &EnvSpec, pixels: bool) -> Self {
        let n = ts.len();
        let mut action = Array2::zeros((n, spec.action_dim));
        for (i, t) in ts.iter().enumerate() {
            action.row_mut(i).assign(&ndarray::ArrayView1::from(&t.action[..]));
        }
        Self {
            obs: ObsBatch::from_stored(ts.iter().map(|t| &t.obs), n, spec, pixels),
            action,
            reward: ts.iter().map(|t| t.reward).collect(),
            next_obs: ObsBatch::from_stored(ts.iter().map(|t| &t.next_obs), n, spec, pixels),
            done: ts.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
            latent: ts.iter().map(|t| t.latent_b).collect(),
        }
    }
}

/// Gradients of the critic loss, laid out like the critic parameters.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub encoder: Option<ConvEncoder>,
    pub q1: Mlp,
    pub q2: Mlp,
}

impl CriticGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.encoder.as_ref().map(|e| e.flat()).unwrap_or_default();
        out.extend(self.q1.flat());
        out.extend(self.q2.flat());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic: f64,
    pub actor: f64,
    pub temperature: f64,
    pub alpha: f64,
    /// Mean of `-log pi` over the batch.
    pub entropy: f64,
}

/// `ln(1 - tanh(u)^2)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Squashed-Gaussian sample and the quantities its gradient needs.
struct PolicySample {
    action: Array2<f64>,
    log_prob: Array1<f64>,
    eps: Array2<f64>,
    sigma: Array2<f64>,
    squash: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    config: SacConfig,
    spec: EnvSpec,
    encoder: Option<ConvEncoder>,
    target_encoder: Option<ConvEncoder>,
    actor: Mlp,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    log_alpha: f64,
    critic_opt: Adam,
    actor_opt: Adam,
    alpha_opt: Adam,
    rng: ChaCha8Rng,
    updates: u64,
}

fn sizes<P: Params>(p: &P) -> Vec<usize> {
    p.tensors().iter().map(|t| t.2.len()).collect()
}

impl SacAgent {
    pub fn new(config: SacConfig, spec: EnvSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        if spec.action_dim == 0 || spec.vector_dim == 0 {
            return Err(AgentError::Config("agent needs a non-empty action and vector".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = if config.kind.uses_pixels() {
            let cs = ConvSpec {
                side: spec.side,
                channels: spec.frames,
                filters: config.conv_filters,
                kernel: config.conv_kernel,
                stride: config.conv_stride,
                layers: config.conv_layers,
                embed: config.embed_dim,
            };
            if !cs.valid() {
                return Err(AgentError::Config(format!("conv stack does not fit a {0}x{0} input", spec.side)));
            }
            Some(ConvEncoder::new(cs, &mut rng))
        } else {
            None
        };
        let feat = encoder.as_ref().map_or(0, |e| e.spec.embed) + spec.vector_dim;
        let critic_in = feat + spec.action_dim + usize::from(config.kind.asymmetric());
        let trunk = |input: usize, out: usize| -> Vec<usize> {
            std::iter::once(input).chain(config.hidden.iter().copied()).chain(std::iter::once(out)).collect()
        };
        let actor = Mlp::new(&trunk(feat, 2 * spec.action_dim), &mut rng);
        let q1 = Mlp::new(&trunk(critic_in, 1), &mut rng);
        let q2 = Mlp::new(&trunk(critic_in, 1), &mut rng);
        let mut critic_sizes = encoder.as_ref().map(sizes).unwrap_or_default();
        critic_sizes.extend(sizes(&q1));
        critic_sizes.extend(sizes(&q2));
        let critic_opt = Adam::new(config.lr, &critic_sizes);
        let actor_opt = Adam::new(config.lr, &sizes(&actor));
        let alpha_opt = Adam::new(config.lr, &[1]);
        Ok(Self {
            target_encoder: encoder.clone(),
            encoder,
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha: config.init_temperature.ln(),
            critic_opt,
            actor_opt,
            alpha_opt,
            rng,
            updates: 0,
            config,
            spec,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn kind(&self) -> AgentKind {
        self.config.kind
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.spec.action_dim as f64))
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn q_networks(&self) -> (&Mlp, &Mlp) {
        (&self.q1, &self.q2)
    }

    pub fn target_q_networks(&self) -> (&Mlp, &Mlp) {
        (&self.q1_target, &self.q2_target)
    }

    pub fn q_networks_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.q1, &mut self.q2)
    }

    pub fn target_q_networks_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.q1_target, &mut self.q2_target)
    }

    pub fn encoder(&self) -> Option<&ConvEncoder> {
        self.encoder.as_ref()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Zero the actor's output layer, so deterministic actions are 0.
    pub fn zero_actor_head(&mut self) {
        self.actor.layers.last_mut().expect("non-empty").fill(0.0);
    }

    pub fn obs_batch(&self, obs: &Observation) -> Result<ObsBatch> {
        ObsBatch::from_observation(obs, &self.spec, self.config.kind.uses_pixels())
    }

    pub fn batch(&self, ts: &[&Transition]) -> Batch {
        Batch::from_transitions(ts, &self.spec, self.config.kind.uses_pixels())
    }

    /// Policy state features `[encoder(pixels) | vector]`. This is the only
    /// input the actor ever receives.
    fn state_features(&self, obs: &ObsBatch, target: bool) -> Array2<f64> {
        let enc = if target { &self.target_encoder } else { &self.encoder };
        match (enc, &obs.pixels) {
            (Some(e), Some(px)) => concatenate![Axis(1), e.forward(px.view()), obs.vector],
            _ => obs.vector.clone(),
        }
    }

    fn latent_column(&self, latent: &Array1<f64>) -> Option<Array2<f64>> {
        self.config.kind.asymmetric().then(|| {
            let [lo, hi] = self.config.latent_range;
            latent.mapv(|b| (b - lo) / (hi - lo)).insert_axis(Axis(1))
        })
    }

    fn critic_input(
        &self,
        state: ArrayView2<f64>,
        action: ArrayView2<f64>,
        latent: &Option<Array2<f64>>,
    ) -> Array2<f64> {
        match latent {
            Some(b) => concatenate![Axis(1), state, action, b.view()],
            None => concatenate![Axis(1), state, action],
        }
    }

    /// Critic-side state encoding with the normalised latent appended.
    pub fn asymmetric_encode(&self, obs: &Observation, latent_b: f64) -> Result<Vec<f64>> {
        if !self.config.kind.asymmetric() {
            return Err(AgentError::Mode(format!("asymmetric_encode called on a {:?} agent", self.config.kind)));
        }
        let state = self.state_features(&self.obs_batch(obs)?, false);
        let col = self.latent_column(&Array1::from(vec![latent_b])).expect("asymmetric");
        Ok(concatenate![Axis(1), state, col].row(0).to_vec())
    }

    fn squash(&self, out: &Array2<f64>, eps: Array2<f64>) -> PolicySample {
        let da = self.spec.action_dim;
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let mean = out.slice(s![.., ..da]);
        let squash = out.slice(s![.., da..]).mapv(f64::tanh);
        let log_std = squash.mapv(|t| lo + 0.5 * (hi - lo) * (t + 1.0));
        let sigma = log_std.mapv(f64::exp);
        let u = &mean + &(&sigma * &eps);
        let action = u.mapv(f64::tanh);
        let mut log_prob = Array1::zeros(out.nrows());
        for n in 0..out.nrows() {
            let mut lp = 0.0;
            for i in 0..da {
                let e = eps[[n, i]];
                lp += -0.5 * e * e - log_std[[n, i]] - HALF_LN_2PI - log_one_minus_tanh_sq(u[[n, i]]);
            }
            log_prob[n] = lp;
        }
        PolicySample { action, log_prob, eps, sigma, squash }
    }

    fn normal_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    /// Actions for a batch of state features.
    fn policy(&self, state: ArrayView2<f64>, deterministic: bool, rng: &mut ChaCha8Rng) -> Array2<f64> {
        debug_assert_eq!(state.ncols(), self.actor.input_dim(), "actor input must be the state features only");
        let out = self.actor.forward(state);
        if deterministic {
            out.slice(s![.., ..self.spec.action_dim]).mapv(f64::tanh)
        } else {
            let eps = Self::normal_noise(out.nrows(), self.spec.action_dim, rng);
            self.squash(&out, eps).action
        }
    }

    /// Action for one observation. Stochastic actions draw from `rng`.
    pub fn act_with(&self, obs: &Observation, deterministic: bool, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let state = self.state_features(&self.obs_batch(obs)?, false);
        let a = self.policy(state.view(), deterministic, rng).row(0).to_vec();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::NonFinite("policy action".into()));
        }
        Ok(a)
    }

    /// Action for one observation using the agent's own RNG.
    pub fn act(&mut self, obs: &Observation, deterministic: bool) -> Result<Vec<f64>> {
        let mut rng = self.rng.clone();
        let a = self.act_with(obs, deterministic, &mut rng);
        self.rng = rng;
        a
    }

    /// Uniform action in `[-1, 1]^d` from the agent's RNG.
    pub fn random_action(&mut self) -> Vec<f64> {
        (0..self.spec.action_dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }

    /// Soft Bellman target `r + gamma (1 - done) (min Q' - alpha log pi)`.
    /// Draws next actions from the agent RNG.
    pub fn critic_target(&mut self, batch: &Batch) -> Array1<f64> {
        let state_next = self.state_features(&batch.next_obs, false);
        let out = self.actor.forward(state_next.view());
        let eps = Self::normal_noise(out.nrows(), self.spec.action_dim, &mut self.rng);
        let sample = self.squash(&out, eps);
        let target_state = if self.encoder.is_some() { self.state_features(&batch.next_obs, true) } else { state_next };
        let latent = self.latent_column(&batch.latent);
        let x = self.critic_input(target_state.view(), sample.action.view(), &latent);
        let q1 = self.q1_target.forward(x.view());
        let q2 = self.q2_target.forward(x.view());
        let alpha = self.alpha();
        let gamma = self.spec.gamma;
        let mut y = Array1::zeros(batch.reward.len());
        for n in 0..y.len() {
            let soft = q1[[n, 0]].min(q2[[n, 0]]) - alpha * sample.log_prob[n];
            y[n] = batch.reward[n] + gamma * (1.0 - batch.done[n]) * soft;
        }
        y
    }

    /// `mean((Q1 - y)^2) + mean((Q2 - y)^2)` for a fixed target.
    pub fn critic_loss(&self, batch: &Batch, y: &Array1<f64>) -> f64 {
        let state = self.state_features(&batch.obs, false);
        let x = self.critic_input(state.view(), batch.action.view(), &self.latent_column(&batch.latent));
        let q1 = self.q1.forward(x.view());
        let q2 = self.q2.forward(x.view());
        let n = y.len() as f64;
        (0..y.len()).map(|i| (q1[[i, 0]] - y[i]).powi(2) + (q2[[i, 0]] - y[i]).powi(2)).sum::<f64>() / n
    }

    /// Critic loss, its gradient, and the (pre-update) state features.
    pub fn critic_loss_grad(&self, batch: &Batch, y: &Array1<f64>) -> (f64, CriticGrads, Array2<f64>) {
        let (state, enc_cache) = match (&self.encoder, &batch.obs.pixels) {
            (Some(e), Some(px)) => {
                let (f, cache) = e.forward_cached(px.view());
                (concatenate![Axis(1), f, batch.obs.vector], Some(cache))
            }
            _ => (batch.obs.vector.clone(), None),
        };
        let x = self.critic_input(state.view(), batch.action.view(), &self.latent_column(&batch.latent));
        let (q1, c1) = self.q1.forward_cached(x.view());
        let (q2, c2) = self.q2.forward_cached(x.view());
        let n = y.len() as f64;
        let mut loss = 0.0;
        let mut d1 = Array2::zeros((y.len(), 1));
        let mut d2 = Array2::zeros((y.len(), 1));
        for i in 0..y.len() {
            let e1 = q1[[i, 0]] - y[i];
            let e2 = q2[[i, 0]] - y[i];
            loss += (e1 * e1 + e2 * e2) / n;
            d1[[i, 0]] = 2.0 * e1 / n;
            d2[[i, 0]] = 2.0 * e2 / n;
        }
        let mut g1 = self.q1.zeros_like();
        let mut g2 = self.q2.zeros_like();
        let dx1 = self.q1.backward(&c1, d1, &mut g1);
        let dx2 = self.q2.backward(&c2, d2, &mut g2);
        let encoder = match (&self.encoder, enc_cache) {
            (Some(e), Some(cache)) => {
                let embed = e.spec.embed;
                let d_feat = &dx1.slice(s![.., ..embed]) + &dx2.slice(s![.., ..embed]);
                let mut ge = e.zeros_like();
                e.backward(&cache, d_feat.view(), &mut ge);
                Some(ge)
            }
            _ => None,
        };
        (loss, CriticGrads { encoder, q1: g1, q2: g2 }, state)
    }

    /// Critic parameters in the same order as [`CriticGrads::flat`].
    pub fn critic_params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.encoder.as_mut().map(|e| e.tensors_mut()).unwrap_or_default();
        out.extend(self.q1.tensors_mut());
        out.extend(self.q2.tensors_mut());
        out
    }

    fn actor_step(&mut self, state: &Array2<f64>, latent: &Array1<f64>) -> (f64, f64, f64) {
        let (out, cache) = self.actor.forward_cached(state.view());
        let eps = Self::normal_noise(out.nrows(), self.spec.action_dim, &mut self.rng);
        let sample = self.squash(&out, eps);
        let latent = self.latent_column(latent);
        let x = self.critic_input(state.view(), sample.action.view(), &latent);
        let (q1, c1) = self.q1.forward_cached(x.view());
        let (q2, c2) = self.q2.forward_cached(x.view());
        let rows = out.nrows();
        let n = rows as f64;
        let alpha = self.alpha();
        let mut dq1 = Array2::zeros((rows, 1));
        let mut dq2 = Array2::zeros((rows, 1));
        let mut loss = 0.0;
        for i in 0..rows {
            let qmin = q1[[i, 0]].min(q2[[i, 0]]);
            loss += (alpha * sample.log_prob[i] - qmin) / n;
            if q1[[i, 0]] <= q2[[i, 0]] {
                dq1[[i, 0]] = -1.0 / n;
            } else {
                dq2[[i, 0]] = -1.0 / n;
            }
        }
        let mut scratch1 = self.q1.zeros_like();
        let mut scratch2 = self.q2.zeros_like();
        let dx = self.q1.backward(&c1, dq1, &mut scratch1) + self.q2.backward(&c2, dq2, &mut scratch2);
        let da = self.spec.action_dim;
        let a0 = state.ncols();
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let mut d_out = Array2::zeros(out.raw_dim());
        for r in 0..rows {
            for i in 0..da {
                let a = sample.action[[r, i]];
                let du = 2.0 * alpha * a / n + dx[[r, a0 + i]] * (1.0 - a * a);
                let dls = -alpha / n + du * sample.sigma[[r, i]] * sample.eps[[r, i]];
                let t = sample.squash[[r, i]];
                d_out[[r, i]] = du;
                d_out[[r, da + i]] = dls * 0.5 * (hi - lo) * (1.0 - t * t);
            }
        }
        let mut grad = self.actor.zeros_like();
        self.actor.backward(&cache, d_out, &mut grad);
        let gflat: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.2.to_vec()).collect();
        self.actor_opt.step(self.actor.tensors_mut(), gflat.iter().map(|g| &g[..]).collect());

        let mean_logp = sample.log_prob.mean().unwrap_or(0.0);
        let target = self.target_entropy();
        let alpha_grad = -(mean_logp + target);
        let alpha_loss = -self.log_alpha * (mean_logp + target);
        let mut la = [self.log_alpha];
        self.alpha_opt.step(vec![&mut la[..]], vec![&[alpha_grad][..]]);
        self.log_alpha = la[0];
        (loss, alpha_loss, -mean_logp)
    }

    /// Polyak-average target critics (and target encoder) toward the online ones.
    pub fn soft_update(&mut self) {
        let tau = self.config.tau;
        polyak(&mut self.q1_target, &self.q1, tau);
        polyak(&mut self.q2_target, &self.q2, tau);
        if let (Some(t), Some(e)) = (self.target_encoder.as_mut(), self.encoder.as_ref()) {
            polyak(t, e, tau);
        }
    }

    /// One gradient step on critic, actor and temperature, then a target update.
    pub fn update(&mut self, batch: &Batch) -> Result<Losses> {
        let y = self.critic_target(batch);
        let (critic, grads, state) = self.critic_loss_grad(batch, &y);
        let gflat = grads.flat();
        if !critic.is_finite() || gflat.iter().any(|g| !g.is_finite()) {
            return Err(AgentError::NonFinite(format!("critic loss at update {}", self.updates)));
        }
        let mut views: Vec<&[f64]> = Vec::new();
        let mut k = 0;
        let lens: Vec<usize> = self.critic_params_mut().iter().map(|t| t.len()).collect();
        for len in lens {
            views.push(&gflat[k..k + len]);
            k += len;
        }
        let mut opt = std::mem::replace(&mut self.critic_opt, Adam::new(0.0, &[]));
        opt.step(self.critic_params_mut(), views);
        self.critic_opt = opt;

        let (actor, temperature, entropy) = self.actor_step(&state, &batch.latent);
        if !actor.is_finite() || !self.log_alpha.is_finite() {
            return Err(AgentError::NonFinite(format!("actor or temperature loss at update {}", self.updates)));
        }
        self.soft_update();
        self.updates += 1;
        Ok(Losses { critic, actor, temperature, alpha: self.alpha(), entropy })
    }

    fn named_modules(&self) -> Vec<(&'static str, &dyn ParamsDyn)> {
        let mut out: Vec<(&'static str, &dyn ParamsDyn)> = vec![
            ("actor", &self.actor),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ];
        if let (Some(e), Some(t)) = (&self.encoder, &self.target_encoder) {
            out.push(("encoder", e));
            out.push(("target_encoder", t));
        }
        out
    }

    /// Store the agent under `prefix.*` tensors and `metadata[prefix]`.
    pub fn save(&self, prefix: &str, ckpt: &mut Checkpoint) -> Result<()> {
        for (name, module) in self.named_modules() {
            for (t, shape, data) in module.dyn_tensors() {
                ckpt.insert(format!("{prefix}.{name}.{t}"), Tensor::f64(shape, data.to_vec()));
            }
        }
        for (name, opt) in [("critic", &self.critic_opt), ("actor", &self.actor_opt), ("alpha", &self.alpha_opt)] {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                ckpt.insert(format!("{prefix}.opt.{name}.m{i:03}"), Tensor::f64(vec![m.len()], m.clone()));
                ckpt.insert(format!("{prefix}.opt.{name}.v{i:03}"), Tensor::f64(vec![v.len()], v.clone()));
            }
        }
        ckpt.insert(format!("{prefix}.log_alpha"), Tensor::f64(vec![1], vec![self.log_alpha]));
        let meta = json!({
            "config": self.config,
            "spec": self.spec,
            "updates": self.updates,
            "rng": self.rng,
            "optimizers": {
                "critic": self.critic_opt,
                "actor": self.actor_opt,
                "alpha": self.alpha_opt,
            },
        });
        match ckpt.metadata.as_object_mut() {
            Some(obj) => {
                obj.insert(prefix.to_string(), meta);
            }
            None => ckpt.metadata = json!({ prefix: meta }),
        }
        Ok(())
    }

    /// Rebuild an agent saved with [`save`](Self::save).
    pub fn load(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let meta = ckpt
            .metadata
            .get(prefix)
            .ok_or_else(|| AgentError::Checkpoint(format!("no agent metadata under {prefix}")))?;
        let config: SacConfig = serde_json::from_value(meta["config"].clone())?;
        let spec: EnvSpec = serde_json::from_value(meta["spec"].clone())?;
        let mut agent = Self::new(config, spec, 0)?;
        agent.updates = serde_json::from_value(meta["updates"].clone())?;
        agent.rng = serde_json::from_value(meta["rng"].clone())?;
        agent.log_alpha = ckpt.f64s(&format!("{prefix}.log_alpha"))?[0];
        let names: Vec<&'static str> = agent.named_modules().iter().map(|m| m.0).collect();
        for name in names {
            let module: &mut dyn ParamsDyn = match name {
                "actor" => &mut agent.actor,
                "q1" => &mut agent.q1,
                "q2" => &mut agent.q2,
                "q1_target" => &mut agent.q1_target,
                "q2_target" => &mut agent.q2_target,
                "encoder" => agent.encoder.as_mut().expect("pixel agent"),
                _ => agent.target_encoder.as_mut().expect("pixel agent"),
            };
            load_module(prefix, name, module, ckpt)?;
        }
        for (name, slot) in [("critic", 0usize), ("actor", 1), ("alpha", 2)] {
            let saved: Adam = serde_json::from_value(meta["optimizers"][name].clone())?;
            let opt = match slot {
                0 => &mut agent.critic_opt,
                1 => &mut agent.actor_opt,
                _ => &mut agent.alpha_opt,
            };
            let (m, v) = (std::mem::take(&mut opt.m), std::mem::take(&mut opt.v));
            *opt = Adam { m, v, ..saved };
            for i in 0..opt.m.len() {
                let m = ckpt.f64s(&format!("{prefix}.opt.{name}.m{i:03}"))?;
                let v = ckpt.f64s(&format!("{prefix}.opt.{name}.v{i:03}"))?;
                if m.len() != opt.m[i].len() || v.len() != opt.v[i].len() {
                    return Err(AgentError::Checkpoint(format!("optimizer {name} tensor {i} has the wrong size")));
                }
                opt.m[i].copy_from_slice(m);
                opt.v[i].copy_from_slice(v);
            }
        }
        Ok(agent)
    }

    /// Every parameter tensor, prefixed by module name.
    pub fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (name, module) in self.named_modules() {
            for (t, _, data) in module.dyn_tensors() {
                out.push((format!("{name}.{t}"), data.to_vec()));
            }
        }
        out.push(("log_alpha".into(), vec![self.log_alpha]));
        out
    }
}

/// Object-safe view of [`Params`] used for checkpoint iteration.
trait ParamsDyn {
    fn dyn_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])>;
    fn dyn_tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl<P: Params> ParamsDyn for P {
    fn dyn_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.tensors()
    }

    fn dyn_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors_mut()
    }
}

fn load_module(prefix: &str, name: &str, module: &mut dyn ParamsDyn, ckpt: &Checkpoint) -> Result<()> {
    let layout: Vec<(String, Vec<usize>)> = module.dyn_tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    for ((t, shape), dst) in layout.into_iter().zip(module.dyn_tensors_mut()) {
        let key = format!("{prefix}.{name}.{t}");
        let tensor = ckpt.get(&key)?;
        if tensor.shape != shape {
            return Err(AgentError::Checkpoint(format!(
                "{key}: checkpoint shape {:?} does not match agent shape {:?}",
                tensor.shape, shape
            )));
        }
        dst.copy_from_slice(ckpt.f64s(&key)?);
    }
    Ok(())
}

/// The vector observation used by the vector-only agent:
/// normalised coefficients followed by the previous action.
pub fn mini_sac_observe(obs: &Observation) -> Vec<f64> {
    obs.vector()
}
