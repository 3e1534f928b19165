//! Per-step trace images of one episode.

use std::path::{Path, PathBuf};

use pulsectl_core::frog::render_png;
use pulsectl_core::{DispersionCoeffs, LaserEnv};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::eval::PolicyChoice;
use crate::output::{fmt_opt, CsvOut};
use crate::seeds::eval_episode_seed;

const METRICS_HEADER: [&str; 6] = ["t", "gdd", "tod", "fod", "reward", "fwhm"];

pub fn frame_name(step: usize) -> String {
    format!("step_{step:03}.png")
}

/// Roll out evaluation episode 0 at `b` and write one PNG per step plus
/// `metrics.csv`. Returns the image paths.
pub fn render_episode(
    config: &ExperimentConfig,
    policy: &PolicyChoice,
    b: f64,
    dir: &Path,
    hash: &str,
) -> Result<Vec<PathBuf>> {
    let mut env_cfg = config.env_for_agent();
    // A vector-only agent ignores the traces, so turning them on changes nothing it sees.
    env_cfg.observe_traces = true;
    let mut env = LaserEnv::new(env_cfg)?;
    policy.check_env(&env)?;
    let seed = eval_episode_seed(config.eval.seed, 0);
    let mut controller = policy.controller(&env, seed);
    let dynamics = env.chain().dynamics(b)?;
    let mut obs = env.reset(seed, Some(dynamics))?;
    let mut w = CsvOut::create(&dir.join("metrics.csv"), hash, &METRICS_HEADER)?;
    let mut paths = Vec::with_capacity(env.horizon());
    loop {
        let action = controller.act(&obs)?;
        let res = env.step(&action)?;
        let t = res.info.step;
        let path = dir.join(frame_name(t));
        render_png(&env.render()?, &path)?;
        paths.push(path);
        let psi = res.info.psi;
        w.row([
            t.to_string(),
            psi[0].to_string(),
            psi[1].to_string(),
            psi[2].to_string(),
            res.reward.to_string(),
            fmt_opt(res.info.fwhm),
        ])?;
        obs = res.observation;
        if res.done {
            break;
        }
    }
    w.finish()?;
    Ok(paths)
}

/// A single frame of a fixed setting at `b`.
pub fn render_setting(config: &ExperimentConfig, psi: [f64; 3], b: f64, dir: &Path, hash: &str) -> Result<PathBuf> {
    let env = LaserEnv::new(config.env.clone())?;
    let dynamics = env.chain().dynamics(b)?;
    let field = env.chain().propagate(DispersionCoeffs::from_array(psi), dynamics)?;
    let trace = env.synth().trace(&field)?;
    let path = dir.join(frame_name(0));
    render_png(&trace, &path)?;
    let ratio = field.peak_intensity() / env.chain().tl_reference();
    let mut w = CsvOut::create(&dir.join("metrics.csv"), hash, &METRICS_HEADER)?;
    w.row([
        "0".to_string(),
        psi[0].to_string(),
        psi[1].to_string(),
        psi[2].to_string(),
        ratio.clamp(0.0, 1.0).to_string(),
        fmt_opt(field.fwhm().ok()),
    ])?;
    w.finish()?;
    Ok(path)
}
