//! Black-box baselines on the chain model and the BO-versus-policy
//! control comparison.

use std::path::Path;

use pulsectl_agents::{bo_run, grid_search_1d, BoHistory, GridResult};
use pulsectl_core::{ControlBounds, DispersionCoeffs, EnvConfig, LaserEnv, LatentDynamics, PumpChain};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::eval::{rollout, PolicyChoice};
use crate::output::CsvOut;
use crate::seeds::eval_episode_seed;

/// The controlled coefficients of an environment, mapped to and from the
/// unit box the optimisers work in. Uncontrolled coefficients stay at the
/// box centre (`-psi_c`).
pub struct Problem {
    pub env: LaserEnv,
    pub dynamics: LatentDynamics,
    /// Matched start: the initial setting of evaluation episode 0.
    pub start: [f64; 3],
}

impl Problem {
    pub fn new(env_config: &EnvConfig, b: f64, eval_seed: u64) -> Result<Self> {
        let mut env = LaserEnv::new(env_config.clone())?;
        let dynamics = env.chain().dynamics(b)?;
        env.reset(eval_episode_seed(eval_seed, 0), Some(dynamics))?;
        let start = env.episode().expect("after reset").psi;
        Ok(Self { env, dynamics, start })
    }

    pub fn bounds(&self) -> &ControlBounds {
        self.env.bounds()
    }

    pub fn chain(&self) -> &PumpChain {
        self.env.chain()
    }

    pub fn active(&self) -> &[usize] {
        self.env.active()
    }

    pub fn from_unit(&self, u: &[f64]) -> [f64; 3] {
        let b = self.bounds();
        let mut psi = [b.centre(0), b.centre(1), b.centre(2)];
        for (k, &i) in self.active().iter().enumerate() {
            psi[i] = b.min[i] + u[k] * (b.max[i] - b.min[i]);
        }
        psi
    }

    pub fn to_unit(&self, psi: &[f64; 3]) -> Vec<f64> {
        let b = self.bounds();
        self.active().iter().map(|&i| (psi[i] - b.min[i]) / (b.max[i] - b.min[i])).collect()
    }

    pub fn ratio(&self, psi: &[f64; 3]) -> Result<f64> {
        Ok(self.chain().intensity_ratio(DispersionCoeffs::from_array(*psi), self.dynamics)?)
    }

    /// Whether moving from `a` to `b` respects the per-step bound on every coefficient.
    pub fn within_step(&self, a: &[f64; 3], b: &[f64; 3]) -> bool {
        (0..3).all(|i| (b[i] - a[i]).abs() <= self.bounds().max_step(i))
    }

    /// `|delta psi_i| / c_i` per coefficient.
    pub fn step_fractions(&self, a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
        let r = |i: usize| (b[i] - a[i]).abs() / self.bounds().range(i);
        [r(0), r(1), r(2)]
    }
}

pub fn run_grid(config: &ExperimentConfig) -> Result<(Problem, GridResult)> {
    let p = Problem::new(&config.env, config.baseline.b, config.eval.seed)?;
    let b = p.bounds();
    let active = p.active().to_vec();
    let lo: Vec<f64> = active.iter().map(|&i| b.min[i]).collect();
    let hi: Vec<f64> = active.iter().map(|&i| b.max[i]).collect();
    let start: Vec<f64> = active.iter().map(|&i| p.start[i]).collect();
    let objective = |x: &[f64]| {
        let mut psi = [b.centre(0), b.centre(1), b.centre(2)];
        for (k, &i) in active.iter().enumerate() {
            psi[i] = x[k];
        }
        p.ratio(&psi).unwrap_or(f64::NAN)
    };
    let r = grid_search_1d(objective, &lo, &hi, config.baseline.grid_resolution, &start, config.train.exec)?;
    Ok((p, r))
}

pub fn write_grid(p: &Problem, r: &GridResult, dir: &Path, hash: &str) -> Result<()> {
    let mut w = CsvOut::create(&dir.join("grid_evaluations.csv"), hash, &["eval", "gdd", "tod", "fod", "ratio"])?;
    let full = |x: &[f64]| {
        let b = p.bounds();
        let mut psi = [b.centre(0), b.centre(1), b.centre(2)];
        for (k, &i) in p.active().iter().enumerate() {
            psi[i] = x[k];
        }
        psi
    };
    for (k, (x, v)) in r.evaluations.iter().enumerate() {
        let psi = full(x);
        w.row([k.to_string(), psi[0].to_string(), psi[1].to_string(), psi[2].to_string(), v.to_string()])?;
    }
    w.finish()?;
    let psi = full(&r.best);
    let mut w = CsvOut::create(&dir.join("grid_best.csv"), hash, &["gdd", "tod", "fod", "ratio", "evaluations"])?;
    w.row([
        psi[0].to_string(),
        psi[1].to_string(),
        psi[2].to_string(),
        r.value.to_string(),
        r.evaluations.len().to_string(),
    ])?;
    w.finish()?;
    Ok(())
}

/// BO from the matched start with `budget` objective evaluations.
pub fn run_bo(config: &ExperimentConfig, b: f64, budget: usize) -> Result<(Problem, BoHistory)> {
    let p = Problem::new(&config.env, b, config.eval.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xB0B0);
    let start = p.to_unit(&p.start);
    let hist = bo_run(
        |u| Ok(p.chain().intensity_ratio(DispersionCoeffs::from_array(p.from_unit(u)), p.dynamics)?),
        p.active().len(),
        budget,
        Some(start),
        &config.baseline.bo,
        &mut rng,
    )?;
    Ok((p, hist))
}

pub fn write_bo(p: &Problem, h: &BoHistory, dir: &Path, hash: &str) -> Result<()> {
    let mut w = CsvOut::create(
        &dir.join("bo_history.csv"),
        hash,
        &["query", "gdd", "tod", "fod", "ratio", "best_so_far", "max_step_fraction", "within_step_bound"],
    )?;
    let mut best = f64::NEG_INFINITY;
    let mut prev: Option<[f64; 3]> = None;
    for (k, (u, v)) in h.queries.iter().zip(&h.values).enumerate() {
        let psi = p.from_unit(u);
        best = best.max(*v);
        let (frac, ok) = match prev {
            Some(a) => (p.step_fractions(&a, &psi).into_iter().fold(0.0, f64::max), p.within_step(&a, &psi)),
            None => (0.0, true),
        };
        w.row([
            k.to_string(),
            psi[0].to_string(),
            psi[1].to_string(),
            psi[2].to_string(),
            v.to_string(),
            best.to_string(),
            frac.to_string(),
            u8::from(ok).to_string(),
        ])?;
        prev = Some(psi);
    }
    w.finish()?;
    let (u, v) = h.best().ok_or_else(|| HarnessError::Numerical("empty BO history".into()))?;
    let psi = p.from_unit(u);
    let mut w = CsvOut::create(&dir.join("bo_best.csv"), hash, &["gdd", "tod", "fod", "ratio", "evaluations"])?;
    w.row([psi[0].to_string(), psi[1].to_string(), psi[2].to_string(), v.to_string(), h.values.len().to_string()])?;
    w.finish()?;
    Ok(())
}

/// One row of the control comparison: the `step`-th setting applied by a
/// method, measured against the setting before it.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub method: &'static str,
    pub step: usize,
    pub psi: [f64; 3],
    pub fractions: [f64; 3],
    pub within_bound: bool,
    pub ratio: f64,
}

/// Policy controls and BO queries from the same start setting at `compare.b`.
pub fn compare_bo(config: &ExperimentConfig, policy: &PolicyChoice) -> Result<Vec<ControlStep>> {
    let steps = config.compare.steps;
    let env_cfg = config.env_for_agent();
    if steps > env_cfg.horizon {
        return Err(HarnessError::Config(format!("compare.steps {steps} exceeds the horizon {}", env_cfg.horizon)));
    }
    let p = Problem::new(&env_cfg, config.compare.b, config.eval.seed)?;
    let mut env = LaserEnv::new(env_cfg)?;
    policy.check_env(&env)?;
    let seed = eval_episode_seed(config.eval.seed, 0);
    let mut controller = policy.controller(&env, seed);
    let rec = rollout(&mut env, controller.as_mut(), seed, config.compare.b)?;
    debug_assert_eq!(rec.psi[0], p.start);
    let mut rows = Vec::with_capacity(2 * steps);
    for k in 1..=steps {
        let (a, b) = (rec.psi[k - 1], rec.psi[k]);
        rows.push(ControlStep {
            method: "rl",
            step: k,
            psi: b,
            fractions: p.step_fractions(&a, &b),
            within_bound: p.within_step(&a, &b),
            ratio: rec.rewards[k - 1],
        });
    }
    let (_, hist) = run_bo(config, config.compare.b, steps + 1)?;
    for k in 1..=steps {
        let a = p.from_unit(&hist.queries[k - 1]);
        let b = p.from_unit(&hist.queries[k]);
        rows.push(ControlStep {
            method: "bo",
            step: k,
            psi: b,
            fractions: p.step_fractions(&a, &b),
            within_bound: p.within_step(&a, &b),
            ratio: hist.values[k].clamp(0.0, 1.0),
        });
    }
    Ok(rows)
}

pub fn write_compare(rows: &[ControlStep], dir: &Path, hash: &str) -> Result<()> {
    let mut w = CsvOut::create(
        &dir.join("compare_bo.csv"),
        hash,
        &["method", "step", "gdd", "tod", "fod", "frac_gdd", "frac_tod", "frac_fod", "within_step_bound", "ratio"],
    )?;
    for r in rows {
        let mut row = vec![r.method.to_string(), r.step.to_string()];
        row.extend(r.psi.iter().map(|v| v.to_string()));
        row.extend(r.fractions.iter().map(|v| v.to_string()));
        row.push(u8::from(r.within_bound).to_string());
        row.push(r.ratio.to_string());
        w.row(row)?;
    }
    w.finish()?;
    Ok(())
}
