//! Fixed-B evaluation rollouts and their statistics.

use std::path::Path;
use std::sync::Arc;

use pulsectl_agents::{CancelPolicy, Controller, EnvSpec, Greedy, RandomPolicy, SacAgent};
use pulsectl_core::{EnvConfig, Exec, LaserEnv};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::output::{fmt_opt, CsvOut};
use crate::seeds::eval_episode_seed;

/// What chooses the actions during evaluation.
#[derive(Debug, Clone)]
pub enum PolicyChoice {
    Agent(Box<SacAgent>),
    /// Drive the stretcher to `-psi_c`.
    Cancel,
    Random,
}

impl PolicyChoice {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyChoice::Agent(_) => "agent",
            PolicyChoice::Cancel => "cancel",
            PolicyChoice::Random => "random",
        }
    }

    /// Fail early when a checkpointed agent does not fit the environment.
    pub fn check_env(&self, env: &LaserEnv) -> Result<()> {
        if let PolicyChoice::Agent(agent) = self {
            let want = EnvSpec::from_env(env);
            let have = *agent.spec();
            let pixels = agent.kind().uses_pixels();
            let compatible = have.action_dim == want.action_dim
                && have.vector_dim == want.vector_dim
                && (!pixels || (have.frames == want.frames && have.side == want.side));
            if !compatible {
                return Err(HarnessError::Config(format!(
                    "checkpoint agent expects {have:?} but the environment provides {want:?}"
                )));
            }
            if pixels && !env.config().observe_traces {
                return Err(HarnessError::Config("pixel agent needs env.observe_traces = true".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn controller(&self, env: &LaserEnv, seed: u64) -> Box<dyn Controller + '_> {
        match self {
            PolicyChoice::Agent(a) => Box::new(Greedy(a.as_ref())),
            PolicyChoice::Cancel => Box::new(CancelPolicy { alpha: env.config().alpha }),
            PolicyChoice::Random => Box::new(RandomPolicy::new(seed ^ 0x5eed)),
        }
    }
}

/// One evaluation episode. `psi` and `fwhm` include the initial state;
/// `rewards` and `actions` have one entry per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub b: f64,
    pub episode: usize,
    pub seed: u64,
    pub psi: Vec<[f64; 3]>,
    pub fwhm: Vec<Option<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl EpisodeRecord {
    /// `I* = max_t I_t / I_TL` over the steps taken.
    pub fn max_ratio(&self) -> f64 {
        self.rewards.iter().copied().fold(0.0, f64::max)
    }

    pub fn final_ratio(&self) -> f64 {
        self.rewards.last().copied().unwrap_or(0.0)
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }
}

pub fn rollout(env: &mut LaserEnv, controller: &mut dyn Controller, seed: u64, b: f64) -> Result<EpisodeRecord> {
    let dynamics = env.chain().dynamics(b)?;
    let mut obs = env.reset(seed, Some(dynamics))?;
    let start = env.episode().expect("after reset");
    let mut rec = EpisodeRecord {
        b,
        episode: 0,
        seed,
        psi: vec![start.psi],
        fwhm: vec![start.fwhm],
        actions: Vec::new(),
        rewards: Vec::new(),
    };
    loop {
        let action = controller.act(&obs)?;
        let res = env.step(&action)?;
        rec.actions.push(action);
        rec.rewards.push(res.reward);
        rec.psi.push(res.info.psi);
        rec.fwhm.push(res.info.fwhm);
        obs = res.observation;
        if res.done {
            return Ok(rec);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BStats {
    pub b: f64,
    pub episodes: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of episodes with `I* >= t`, one entry per threshold.
    pub success: Vec<f64>,
    pub mean_reward: f64,
}

pub fn summarize(b: f64, records: &[&EpisodeRecord], thresholds: &[f64]) -> BStats {
    let values: Vec<f64> = records.iter().map(|r| r.max_ratio()).collect();
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std =
        if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    BStats {
        b,
        episodes: n,
        mean,
        std,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        success: thresholds.iter().map(|&t| values.iter().filter(|&&v| v >= t).count() as f64 / n as f64).collect(),
        mean_reward: records.iter().map(|r| r.mean_reward()).sum::<f64>() / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub thresholds: Vec<f64>,
    pub stats: Vec<BStats>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Deterministic rollouts at each B with the shared evaluation seeds.
pub fn evaluate(
    env_config: &EnvConfig,
    policy: &PolicyChoice,
    b_values: &[f64],
    episodes: usize,
    eval_seed: u64,
    thresholds: &[f64],
    exec: Exec,
) -> Result<EvalReport> {
    let base = LaserEnv::new(env_config.clone())?;
    policy.check_env(&base)?;
    let (chain, synth) = (Arc::clone(base.chain()), Arc::clone(base.synth()));
    let jobs: Vec<(f64, usize)> = b_values.iter().flat_map(|&b| (0..episodes).map(move |e| (b, e))).collect();
    let results = exec.map(&jobs, |&(b, e)| -> Result<EpisodeRecord> {
        let mut env = LaserEnv::from_parts(env_config.clone(), Arc::clone(&chain), Arc::clone(&synth));
        let seed = eval_episode_seed(eval_seed, e as u64);
        let mut controller = policy.controller(&env, seed);
        let mut rec = rollout(&mut env, controller.as_mut(), seed, b)?;
        rec.episode = e;
        Ok(rec)
    });
    let records: Vec<EpisodeRecord> = results.into_iter().collect::<Result<_>>()?;
    let stats = b_values
        .iter()
        .map(|&b| {
            let rs: Vec<&EpisodeRecord> = records.iter().filter(|r| r.b == b).collect();
            summarize(b, &rs, thresholds)
        })
        .collect();
    Ok(EvalReport { policy: policy.label().into(), thresholds: thresholds.to_vec(), stats, episodes: records })
}

pub fn write_report(report: &EvalReport, dir: &Path, hash: &str) -> Result<()> {
    let mut header = vec!["b".to_string(), "episodes".into(), "mean".into(), "std".into(), "min".into(), "max".into()];
    header.extend(report.thresholds.iter().map(|t| format!("success_{t:.2}")));
    header.push("mean_reward".into());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(&dir.join("eval_summary.csv"), hash, &refs)?;
    for s in &report.stats {
        let mut row = vec![
            s.b.to_string(),
            s.episodes.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.min.to_string(),
            s.max.to_string(),
        ];
        row.extend(s.success.iter().map(|v| v.to_string()));
        row.push(s.mean_reward.to_string());
        w.row(row)?;
    }
    w.finish()?;

    let mut w = CsvOut::create(
        &dir.join("eval_episodes.csv"),
        hash,
        &["b", "episode", "seed", "max_ratio", "final_ratio", "mean_reward"],
    )?;
    for r in &report.episodes {
        w.row([
            r.b.to_string(),
            r.episode.to_string(),
            r.seed.to_string(),
            r.max_ratio().to_string(),
            r.final_ratio().to_string(),
            r.mean_reward().to_string(),
        ])?;
    }
    w.finish()?;

    let dim = report.episodes.first().and_then(|r| r.actions.first()).map_or(0, Vec::len);
    let mut header: Vec<String> =
        ["b", "episode", "t", "gdd", "tod", "fod", "fwhm", "reward"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("action_{i}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(&dir.join("eval_trajectories.csv"), hash, &refs)?;
    for r in &report.episodes {
        for t in 0..r.psi.len() {
            let mut row = vec![r.b.to_string(), r.episode.to_string(), t.to_string()];
            row.extend(r.psi[t].iter().map(|v| v.to_string()));
            row.push(fmt_opt(r.fwhm[t]));
            if t == 0 {
                row.push(String::new());
                row.extend((0..dim).map(|_| String::new()));
            } else {
                row.push(r.rewards[t - 1].to_string());
                row.extend(r.actions[t - 1].iter().map(|v| v.to_string()));
            }
            w.row(row)?;
        }
    }
    w.finish()?;
    Ok(())
}

pub fn write_sweep(report: &EvalReport, dir: &Path, hash: &str) -> Result<()> {
    let mut w = CsvOut::create(&dir.join("sweep_b.csv"), hash, &["b", "mean", "std"])?;
    for s in &report.stats {
        w.row([s.b.to_string(), s.mean.to_string(), s.std.to_string()])?;
    }
    w.finish()?;
    Ok(())
}
