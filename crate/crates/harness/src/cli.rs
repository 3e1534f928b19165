//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pulsectl_agents::Checkpoint;

use crate::baselines::{compare_bo, run_bo, run_grid, write_bo, write_compare, write_grid};
use crate::config::{check_b_values, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, write_report, write_sweep, PolicyChoice};
use crate::output::ensure_dir;
use crate::render::{render_episode, render_setting};
use crate::train::{load_agent, Trainer};

#[derive(Debug, Parser)]
#[command(name = "pulsectl", version, about = "Learned dispersion control for a chirped pulse amplifier model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent; with --checkpoint, resume a run.
    Train(CommonArgs),
    /// Evaluate a policy at fixed B values.
    Eval(CommonArgs),
    /// Mean and spread of the peak intensity ratio over a grid of B values.
    SweepB(CommonArgs),
    /// Per-step controls of a policy next to Bayesian optimisation queries.
    CompareBo(CommonArgs),
    /// Write one FROG trace image per step of an evaluation episode.
    Render(CommonArgs),
    /// Coordinate-wise grid search on the chain model.
    BaselineGrid(CommonArgs),
    /// Bayesian optimisation on the chain model.
    BaselineBo(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Agent,
    Cancel,
    Random,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Agent or training checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated B-integral values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub b: Option<Vec<f64>>,
    /// Evaluation episodes per B value.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Which controller to run; defaults to `agent` when a checkpoint is given.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::SweepB(a) => sweep(&a),
        Command::CompareBo(a) => compare(&a),
        Command::Render(a) => render(&a),
        Command::BaselineGrid(a) => baseline_grid(&a),
        Command::BaselineBo(a) => baseline_bo(&a),
    }
}

fn single_b(args: &CommonArgs) -> Result<Option<f64>> {
    match args.b.as_deref() {
        None => Ok(None),
        Some([b]) => {
            check_b_values(&[*b])?;
            Ok(Some(*b))
        }
        Some(_) => Err(HarnessError::Config("this command takes a single --b value".into())),
    }
}

/// `--config`, else the configuration stored in the checkpoint, else the
/// defaults; then the command-line overrides.
fn resolve(args: &CommonArgs, stored: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, stored) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(c)) => c,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(n) = args.episodes {
        cfg.eval.episodes = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone();
    ensure_dir(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())
        .map_err(|e| HarnessError::Io(format!("writing {}: {e}", dir.join("config.toml").display())))?;
    Ok(dir)
}

/// Policy and configuration for the commands that run a controller.
fn policy_and_config(args: &CommonArgs) -> Result<(PolicyChoice, ExperimentConfig)> {
    let choice = args.policy.unwrap_or(if args.checkpoint.is_some() { PolicyArg::Agent } else { PolicyArg::Cancel });
    match choice {
        PolicyArg::Agent => {
            let path = args
                .checkpoint
                .as_deref()
                .ok_or_else(|| HarnessError::Config("--policy agent needs --checkpoint".into()))?;
            let (agent, stored) = load_agent(path)?;
            Ok((PolicyChoice::Agent(Box::new(agent)), resolve(args, stored)?))
        }
        PolicyArg::Cancel => Ok((PolicyChoice::Cancel, resolve(args, None)?)),
        PolicyArg::Random => Ok((PolicyChoice::Random, resolve(args, None)?)),
    }
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read(path).map_err(|e| match e {
        pulsectl_agents::AgentError::Io(io) => HarnessError::Io(format!("reading {}: {io}", path.display())),
        other => HarnessError::from(other).with_context(path.display().to_string()),
    })
}

fn train(args: &CommonArgs) -> Result<()> {
    if args.b.is_some() || args.episodes.is_some() || args.policy.is_some() {
        return Err(HarnessError::Config("train accepts --config, --seed, --out and --checkpoint".into()));
    }
    let mut trainer = match &args.checkpoint {
        Some(path) => {
            let trainer = Trainer::resume(&read_checkpoint(path)?)?;
            let stored = trainer.config().clone();
            let wanted = resolve(args, Some(stored.clone()))?;
            if wanted.hash() != stored.hash() {
                return Err(HarnessError::Config(format!(
                    "configuration differs from the one stored in {}",
                    path.display()
                )));
            }
            log::info!("resuming from step {}", trainer.step());
            trainer
        }
        None => Trainer::new(resolve(args, None)?)?,
    };
    let out = match (&args.out, &args.checkpoint) {
        (Some(out), _) => out.clone(),
        (None, Some(ckpt)) => ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
        (None, None) => trainer.config().out_dir.clone(),
    };
    let mut cfg = trainer.config().clone();
    cfg.out_dir = out.clone();
    prepare_out(&cfg)?;
    let outputs = trainer.run(&out)?;
    log::info!("wrote {} and {}", outputs.final_checkpoint.display(), outputs.log.display());
    Ok(())
}

fn eval(args: &CommonArgs) -> Result<()> {
    let (policy, mut cfg) = policy_and_config(args)?;
    if let Some(bs) = &args.b {
        check_b_values(bs)?;
        cfg.eval.b_values = bs.clone();
    }
    let dir = prepare_out(&cfg)?;
    let report = evaluate(
        &cfg.env_for_agent(),
        &policy,
        &cfg.eval.b_values,
        cfg.eval.episodes,
        cfg.eval.seed,
        &cfg.eval.thresholds,
        cfg.eval.exec,
    )?;
    for s in &report.stats {
        log::info!("B = {}: mean {:.4} std {:.4} success {:?}", s.b, s.mean, s.std, s.success);
    }
    write_report(&report, &dir, &cfg.hash())
}

fn sweep(args: &CommonArgs) -> Result<()> {
    let (policy, cfg) = policy_and_config(args)?;
    let grid = match &args.b {
        Some(bs) => {
            check_b_values(bs)?;
            bs.clone()
        }
        None => cfg.sweep.grid(),
    };
    let dir = prepare_out(&cfg)?;
    let report = evaluate(
        &cfg.env_for_agent(),
        &policy,
        &grid,
        cfg.eval.episodes,
        cfg.eval.seed,
        &cfg.eval.thresholds,
        cfg.eval.exec,
    )?;
    write_sweep(&report, &dir, &cfg.hash())
}

fn compare(args: &CommonArgs) -> Result<()> {
    let (policy, mut cfg) = policy_and_config(args)?;
    if let Some(b) = single_b(args)? {
        cfg.compare.b = b;
    }
    let dir = prepare_out(&cfg)?;
    let rows = compare_bo(&cfg, &policy)?;
    write_compare(&rows, &dir, &cfg.hash())
}

fn render(args: &CommonArgs) -> Result<()> {
    let (policy, mut cfg) = policy_and_config(args)?;
    if let Some(b) = single_b(args)? {
        cfg.render.b = b;
    }
    let dir = prepare_out(&cfg)?;
    let hash = cfg.hash();
    match (cfg.render.psi, args.policy.is_some() || args.checkpoint.is_some()) {
        (Some(psi), false) => {
            render_setting(&cfg, psi, cfg.render.b, &dir, &hash)?;
        }
        _ => {
            let paths = render_episode(&cfg, &policy, cfg.render.b, &dir, &hash)?;
            log::info!("wrote {} frames to {}", paths.len(), dir.display());
        }
    }
    Ok(())
}

fn no_policy(args: &CommonArgs) -> Result<()> {
    if args.policy.is_some() || args.checkpoint.is_some() || args.episodes.is_some() {
        return Err(HarnessError::Config("baselines take no --policy, --checkpoint or --episodes".into()));
    }
    Ok(())
}

fn baseline_grid(args: &CommonArgs) -> Result<()> {
    no_policy(args)?;
    let mut cfg = resolve(args, None)?;
    if let Some(b) = single_b(args)? {
        cfg.baseline.b = b;
    }
    let dir = prepare_out(&cfg)?;
    let (p, r) = run_grid(&cfg)?;
    log::info!("grid best ratio {:.4} after {} evaluations", r.value, r.evaluations.len());
    write_grid(&p, &r, &dir, &cfg.hash())
}

fn baseline_bo(args: &CommonArgs) -> Result<()> {
    no_policy(args)?;
    let mut cfg = resolve(args, None)?;
    if let Some(b) = single_b(args)? {
        cfg.baseline.b = b;
    }
    let dir = prepare_out(&cfg)?;
    let (p, h) = run_bo(&cfg, cfg.baseline.b, cfg.baseline.bo_budget)?;
    if let Some((_, v)) = h.best() {
        log::info!("BO best ratio {v:.4} after {} queries", h.values.len());
    }
    write_bo(&p, &h, &dir, &cfg.hash())
}
