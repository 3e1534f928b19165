//! Experiment configuration (TOML) and its content hash.

use std::path::{Path, PathBuf};

use pulsectl_agents::{AgentKind, BoConfig, SacConfig};
use pulsectl_core::{CurriculumConfig, DrDistribution, EnvConfig, Exec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Training distribution of the B-integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DrConfig {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Doraemon(CurriculumConfig),
}

impl Default for DrConfig {
    fn default() -> Self {
        DrConfig::Doraemon(CurriculumConfig::default())
    }
}

impl DrConfig {
    /// Distribution used for the first training episode.
    pub fn initial(&self) -> DrDistribution {
        match self {
            DrConfig::Fixed { value } => DrDistribution::Fixed { value: *value },
            DrConfig::Uniform { lo, hi } => DrDistribution::Uniform { lo: *lo, hi: *hi },
            DrConfig::Doraemon(c) => DrDistribution::Beta { a: c.init_a, b: c.init_b, lo: c.lo, hi: c.hi },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Write `ckpt_<step>.bin` every this many environment steps (0 = never).
    pub checkpoint_interval: u64,
    /// Terminal intensity ratio counted as success in the training log.
    pub success_threshold: f64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { total_steps: 200_000, checkpoint_interval: 10_000, success_threshold: 0.65, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub b_values: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Evaluation episode seeds derive from this, independent of the
    /// training seed, so every method sees the same starts.
    pub seed: u64,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 25,
            b_values: vec![0.5, 2.17, 3.83],
            thresholds: vec![0.70, 0.75, 0.80],
            seed: 20_230_901,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { b_min: 0.0, b_max: 4.0, points: 17 }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.b_min];
        }
        (0..self.points).map(|i| self.b_min + (self.b_max - self.b_min) * i as f64 / (self.points - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// B-integral of the chain the baselines optimise.
    pub b: f64,
    pub bo_budget: usize,
    pub bo: BoConfig,
    pub grid_resolution: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { b: 2.0, bo_budget: 100, bo: BoConfig::default(), grid_resolution: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub b: f64,
    pub steps: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { b: 2.0, steps: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub b: f64,
    /// Render this fixed setting `[gdd, tod, fod]` instead of rolling out a policy.
    pub psi: Option<[f64; 3]>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { b: 2.0, psi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub dr: DrConfig,
    pub agent: SacConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub baseline: BaselineConfig,
    pub compare: CompareConfig,
    pub render: RenderConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            env: EnvConfig::default(),
            dr: DrConfig::default(),
            agent: SacConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            baseline: BaselineConfig::default(),
            compare: CompareConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("reading {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.env.validate()?;
        if self.env.latent != EnvConfig::default().latent {
            return bad("set the training B-integral distribution under [dr], not env.latent".into());
        }
        self.dr.initial().validate()?;
        if let DrConfig::Doraemon(c) = &self.dr {
            c.validate()?;
            if c.updates as u64 > self.train.total_steps {
                return bad(format!("{} curriculum updates do not fit in {} steps", c.updates, self.train.total_steps));
            }
        }
        self.agent.validate()?;
        self.baseline.bo.validate()?;
        if self.train.total_steps == 0 {
            return bad("train.total_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.train.success_threshold) {
            return bad("train.success_threshold must lie in [0, 1]".into());
        }
        if self.eval.episodes == 0 {
            return bad("eval.episodes must be positive".into());
        }
        if self.eval.thresholds.is_empty() || self.eval.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return bad("eval.thresholds must be non-empty and inside (0, 1)".into());
        }
        check_b_values(&self.eval.b_values)?;
        if self.sweep.points == 0 || !(self.sweep.b_min >= 0.0 && self.sweep.b_max > self.sweep.b_min) {
            return bad("sweep needs points > 0 and 0 <= b_min < b_max".into());
        }
        for (name, b) in [("baseline.b", self.baseline.b), ("compare.b", self.compare.b), ("render.b", self.render.b)] {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if self.baseline.grid_resolution < 2 || self.baseline.bo_budget == 0 {
            return bad("baseline.grid_resolution must be >= 2 and bo_budget > 0".into());
        }
        if self.compare.steps == 0 {
            return bad("compare.steps must be positive".into());
        }
        if self.render.psi.is_some_and(|p| p.iter().any(|v| !v.is_finite())) {
            return bad("render.psi must be finite".into());
        }
        Ok(())
    }

    /// Environment configuration as seen by this experiment's agent. The
    /// vector-only agent skips trace synthesis.
    pub fn env_for_agent(&self) -> EnvConfig {
        let mut env = self.env.clone();
        env.latent = self.dr.initial();
        if self.agent.kind == AgentKind::MiniSac {
            env.observe_traces = false;
        }
        env
    }

    /// SHA-256 of the canonical JSON form, with `out_dir` blanked (it does
    /// not affect results).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let value = serde_json::to_value(&c).expect("config serialises");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

pub fn check_b_values(bs: &[f64]) -> Result<()> {
    if bs.is_empty() || bs.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(HarnessError::Config("B values must be non-empty, finite and non-negative".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "seed = 3\n[dr]\nkind = \"uniform\"\nlo = 1.5\nhi = 2.5\n[agent]\nkind = \"sac\"\n[train]\ntotal_steps = 1000\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.dr, DrConfig::Uniform { lo: 1.5, hi: 2.5 });
        assert_eq!(c.agent.kind, AgentKind::Sac);
        assert_eq!(c.eval.thresholds, vec![0.70, 0.75, 0.80]);
        assert_eq!(c.env.horizon, 20);
    }

    #[test]
    fn doraemon_section_accepts_curriculum_fields() {
        let c = ExperimentConfig::from_toml_str(
            "[dr]\nkind = \"doraemon\"\nlo = 1.0\nhi = 3.5\nupdates = 20\nmin_episodes = 10\n",
        )
        .unwrap();
        match c.dr {
            DrConfig::Doraemon(cc) => assert_eq!(cc.min_episodes, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        for text in [
            "[eval]\nthresholds = [1.2]\n",
            "[eval]\nepisodes = 0\n",
            "[train]\ntotal_steps = 0\n",
            "bogus = 1\n",
            "[env]\nalpha = 0.0\n",
            "[dr]\nkind = \"uniform\"\nlo = 3.0\nhi = 1.0\n",
            "[env.latent]\nkind = \"fixed\"\nvalue = 2.0\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(HarnessError::Config(_))), "accepted {text:?}");
        }
    }

    #[test]
    fn hash_tracks_content_not_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sweep_grid_is_increasing() {
        let g = SweepConfig { b_min: 0.0, b_max: 4.0, points: 10 }.grid();
        assert_eq!(g.len(), 10);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!((g[0], g[9]), (0.0, 4.0));
    }
}
