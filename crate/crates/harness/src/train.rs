//! Single-worker rollout/learn loop with curriculum updates, periodic
//! checkpoints and exact resume.

use std::path::{Path, PathBuf};

use pulsectl_agents::{Checkpoint, EnvSpec, FrameInterner, Losses, ReplayBuffer, SacAgent, StoredObs, Transition};
use pulsectl_core::domain_rand::{UpdateOutcome, CURRICULUM_CSV_HEADER};
use pulsectl_core::env::EpisodeState;
use pulsectl_core::{CurriculumState, LaserEnv, Observation};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{DrConfig, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, fmt_opt, CsvOut};
use crate::seeds::{agent_seed, train_episode_seed};

pub const CHECKPOINT_FORMAT: &str = "pulsectl-train";

/// One row of the per-episode training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub step: u64,
    pub b: f64,
    pub episode_return: f64,
    pub max_ratio: f64,
    pub terminal_ratio: f64,
    pub success: bool,
    pub losses: Option<Losses>,
    pub dr_entropy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
struct EpisodeAccum {
    ret: f64,
    max_ratio: f64,
}

pub struct Trainer {
    config: ExperimentConfig,
    hash: String,
    env: LaserEnv,
    agent: SacAgent,
    replay: ReplayBuffer,
    interner: FrameInterner,
    curriculum: Option<CurriculumState>,
    step: u64,
    episode: u64,
    obs: Observation,
    stored: StoredObs,
    accum: EpisodeAccum,
    last_losses: Option<Losses>,
    episode_log: Vec<EpisodeLog>,
    curriculum_log: Vec<UpdateOutcome>,
}

/// Paths written by a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutputs {
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub curriculum: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut env = LaserEnv::new(config.env_for_agent())?;
        let spec = EnvSpec::from_env(&env);
        let agent = SacAgent::new(config.agent.clone(), spec, agent_seed(config.seed))?;
        let replay = ReplayBuffer::new(config.agent.replay_capacity)?;
        let curriculum = match &config.dr {
            DrConfig::Doraemon(c) => Some(CurriculumState::new(c.clone())?),
            _ => None,
        };
        let obs = env.reset(train_episode_seed(config.seed, 0), None)?;
        let mut interner = FrameInterner::new();
        let stored = interner.intern(&obs);
        Ok(Self {
            hash: config.hash(),
            config,
            env,
            agent,
            replay,
            interner,
            curriculum,
            step: 0,
            episode: 0,
            obs,
            stored,
            accum: EpisodeAccum::default(),
            last_losses: None,
            episode_log: Vec::new(),
            curriculum_log: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn episode_log(&self) -> &[EpisodeLog] {
        &self.episode_log
    }

    pub fn curriculum_log(&self) -> &[UpdateOutcome] {
        &self.curriculum_log
    }

    pub fn curriculum(&self) -> Option<&CurriculumState> {
        self.curriculum.as_ref()
    }

    fn curriculum_interval(&self) -> Option<u64> {
        self.curriculum.as_ref().map(|c| (self.config.train.total_steps / c.config.updates as u64).max(1))
    }

    /// One environment step plus the scheduled learning, curriculum and
    /// checkpoint work.
    pub fn step_once(&mut self, out_dir: &Path, checkpoints: &mut Vec<PathBuf>) -> Result<()> {
        let warm = self.step < self.config.agent.warmup_steps as u64;
        let action = if warm { self.agent.random_action() } else { self.agent.act(&self.obs, false)? };
        let res = self.env.step(&action)?;
        let next = self.interner.intern(&res.observation);
        self.replay.push(Transition {
            obs: std::mem::replace(&mut self.stored, next.clone()),
            action,
            reward: res.reward,
            next_obs: next,
            // Episodes end only by the time limit, which is not a terminal state.
            done: false,
            latent_b: res.info.latent_b,
        });
        self.obs = res.observation;
        self.step += 1;
        self.accum.ret += res.reward;
        self.accum.max_ratio = self.accum.max_ratio.max(res.reward);

        if !warm && self.replay.len() >= self.config.agent.batch_size {
            for _ in 0..self.config.agent.updates_per_step {
                let picked = self.replay.sample(self.config.agent.batch_size, self.agent.rng_mut())?;
                let batch = self.agent.batch(&picked);
                let losses = self
                    .agent
                    .update(&batch)
                    .map_err(|e| HarnessError::from(e).with_context(format!("training step {}", self.step)))?;
                self.last_losses = Some(losses);
            }
        }

        if res.done {
            let terminal = res.info.intensity_ratio;
            let b = res.info.latent_b;
            if let Some(c) = self.curriculum.as_mut() {
                c.record_episode(b, terminal)?;
            }
            self.episode_log.push(EpisodeLog {
                episode: self.episode,
                step: self.step,
                b,
                episode_return: self.accum.ret,
                max_ratio: self.accum.max_ratio,
                terminal_ratio: terminal,
                success: terminal >= self.config.train.success_threshold,
                losses: self.last_losses,
                dr_entropy: self.curriculum.as_ref().map(|c| c.entropy()),
            });
            self.episode += 1;
            self.accum = EpisodeAccum::default();
        }

        if let Some(interval) = self.curriculum_interval() {
            let c = self.curriculum.as_mut().expect("curriculum interval implies curriculum");
            if self.step.is_multiple_of(interval) && self.curriculum_log.len() < c.config.updates {
                let outcome = c.update_with(self.config.train.exec);
                log::info!(
                    "step {}: curriculum {:?} a={:.3} b={:.3} entropy={:.4}",
                    self.step,
                    outcome.status,
                    outcome.a,
                    outcome.b,
                    outcome.entropy
                );
                self.env.set_latent_distribution(c.distribution())?;
                self.curriculum_log.push(outcome);
            }
        }

        if res.done {
            let seed = train_episode_seed(self.config.seed, self.episode);
            self.obs = self.env.reset(seed, None)?;
            self.stored = self.interner.intern(&self.obs);
        }

        let every = self.config.train.checkpoint_interval;
        if every > 0 && self.step.is_multiple_of(every) {
            let path = out_dir.join(format!("ckpt_{:08}.bin", self.step));
            self.save(&path)?;
            self.write_logs(out_dir)?;
            checkpoints.push(path);
        }
        Ok(())
    }

    /// Train until `train.total_steps`, writing checkpoints and logs under `out_dir`.
    pub fn run(&mut self, out_dir: &Path) -> Result<TrainOutputs> {
        ensure_dir(out_dir)?;
        let total = self.config.train.total_steps;
        let mut checkpoints = Vec::new();
        while self.step < total {
            self.step_once(out_dir, &mut checkpoints)?;
            if self.step.is_multiple_of(1000) {
                if let Some(l) = self.episode_log.last() {
                    log::info!(
                        "step {}/{}: episode {} return {:.3} max ratio {:.3}",
                        self.step,
                        total,
                        l.episode,
                        l.episode_return,
                        l.max_ratio
                    );
                }
            }
        }
        let final_checkpoint = out_dir.join("final.bin");
        self.save(&final_checkpoint)?;
        let (log, curriculum) = self.write_logs(out_dir)?;
        Ok(TrainOutputs { checkpoints, final_checkpoint, log, curriculum })
    }

    pub fn write_logs(&self, out_dir: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
        let mut w = CsvOut::create(
            &out_dir.join("train_log.csv"),
            &self.hash,
            &[
                "episode",
                "step",
                "b",
                "return",
                "max_ratio",
                "terminal_ratio",
                "success",
                "critic_loss",
                "actor_loss",
                "alpha",
                "policy_entropy",
                "dr_entropy",
            ],
        )?;
        for r in &self.episode_log {
            let l = r.losses;
            w.row([
                r.episode.to_string(),
                r.step.to_string(),
                r.b.to_string(),
                r.episode_return.to_string(),
                r.max_ratio.to_string(),
                r.terminal_ratio.to_string(),
                u8::from(r.success).to_string(),
                fmt_opt(l.map(|l| l.critic)),
                fmt_opt(l.map(|l| l.actor)),
                fmt_opt(l.map(|l| l.alpha)),
                fmt_opt(l.map(|l| l.entropy)),
                fmt_opt(r.dr_entropy),
            ])?;
        }
        let log = w.finish()?;
        let curriculum = match self.curriculum {
            Some(_) => {
                let header: Vec<&str> = CURRICULUM_CSV_HEADER.split(',').collect();
                let mut w = CsvOut::create(&out_dir.join("curriculum.csv"), &self.hash, &header)?;
                for o in &self.curriculum_log {
                    w.row(o.csv_row().split(','))?;
                }
                Some(w.finish()?)
            }
            None => None,
        };
        Ok((log, curriculum))
    }

    /// The stored configuration has `out_dir` blanked so that checkpoints
    /// do not depend on where they are written.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut config = self.config.clone();
        config.out_dir = PathBuf::new();
        let meta = json!({
            "format": CHECKPOINT_FORMAT,
            "config": config,
            "config_hash": self.hash,
            "step": self.step,
            "episode": self.episode,
            "env_episode": self.env.episode(),
            "latent": self.env.latent_distribution(),
            "curriculum": self.curriculum,
            "accum": self.accum,
            "last_losses": self.last_losses,
            "episode_log": self.episode_log,
            "curriculum_log": self.curriculum_log,
        });
        let mut ckpt = Checkpoint::new(meta);
        self.agent.save("agent", &mut ckpt)?;
        self.replay.save("replay", &mut ckpt);
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write_atomic(path).map_err(|e| match e {
            pulsectl_agents::AgentError::Io(io) => HarnessError::Io(format!("writing {}: {io}", path.display())),
            other => other.into(),
        })
    }

    /// Continue a run from a training checkpoint. The configuration stored in
    /// the checkpoint is authoritative; `out_dir` comes from the caller.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.metadata;
        if meta.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(HarnessError::Config("not a training checkpoint".into()));
        }
        let parse = |name: &str| -> Result<serde_json::Value> {
            meta.get(name).cloned().ok_or_else(|| HarnessError::Config(format!("checkpoint lacks {name}")))
        };
        let config: ExperimentConfig = from_json(parse("config")?, "config")?;
        config.validate()?;
        let agent = SacAgent::load("agent", ckpt)?;
        let replay = ReplayBuffer::load("replay", config.agent.replay_capacity, ckpt)?;
        let mut env = LaserEnv::new(config.env_for_agent())?;
        env.set_latent_distribution(from_json(parse("latent")?, "latent")?)?;
        let episode_state: Option<EpisodeState> = from_json(parse("env_episode")?, "env_episode")?;
        let episode_state =
            episode_state.ok_or_else(|| HarnessError::Config("checkpoint has no active episode".into()))?;
        env.restore_episode(Some(episode_state));
        let obs = env.current_observation().expect("episode restored");
        let mut interner = FrameInterner::new();
        let stored = interner.intern(&obs);
        Ok(Self {
            hash: config.hash(),
            step: from_json(parse("step")?, "step")?,
            episode: from_json(parse("episode")?, "episode")?,
            curriculum: from_json(parse("curriculum")?, "curriculum")?,
            accum: from_json(parse("accum")?, "accum")?,
            last_losses: from_json(parse("last_losses")?, "last_losses")?,
            episode_log: from_json(parse("episode_log")?, "episode_log")?,
            curriculum_log: from_json(parse("curriculum_log")?, "curriculum_log")?,
            config,
            env,
            agent,
            replay,
            interner,
            obs,
            stored,
        })
    }
}

fn from_json<T: serde::de::DeserializeOwned>(v: serde_json::Value, what: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| HarnessError::Config(format!("checkpoint {what}: {e}")))
}

/// Agent and configuration stored in any checkpoint written by [`Trainer`].
pub fn load_agent(path: &Path) -> Result<(SacAgent, Option<ExperimentConfig>)> {
    let ckpt = Checkpoint::read(path).map_err(|e| match e {
        pulsectl_agents::AgentError::Io(io) => HarnessError::Io(format!("reading {}: {io}", path.display())),
        other => HarnessError::from(other).with_context(path.display().to_string()),
    })?;
    let agent = SacAgent::load("agent", &ckpt)?;
    let config = ckpt.metadata.get("config").map(|v| from_json(v.clone(), "config")).transpose()?;
    Ok((agent, config))
}
