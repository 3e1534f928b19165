//! Bayesian optimisation over the unit box with a GP surrogate and
//! expected improvement (maximisation).

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{AgentError, Result};
use crate::gp::{GpHyper, GpSurrogate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    /// Random (or given) queries before the surrogate is used.
    pub init_points: usize,
    /// Refit kernel hyperparameters every this many observations.
    pub refit_every: usize,
    pub candidates: usize,
    /// Best candidates polished by a local simplex search.
    pub refine: usize,
    pub refine_iters: u64,
    pub hyper_iters: u64,
    /// Exploration margin added to the incumbent in EI.
    pub xi: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            init_points: 10,
            refit_every: 10,
            candidates: 512,
            refine: 8,
            refine_iters: 60,
            hyper_iters: 200,
            xi: 0.0,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_points == 0 || self.refit_every == 0 || self.candidates == 0 {
            return Err(AgentError::Config("BO init_points, refit_every and candidates must be positive".into()));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(AgentError::Config("BO xi must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Expected improvement of a Gaussian prediction over `best + xi`.
pub fn expected_improvement(mean: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gain = mean - best - xi;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (gain * cdf + sigma * pdf).max(0.0)
}

fn clamp_unit(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn ei_at(gp: &GpSurrogate, p: &[f64], best: f64, xi: f64) -> f64 {
    let (m, v) = gp.predict(p);
    expected_improvement(m, v.sqrt(), best, xi)
}

struct NegEi<'a> {
    gp: &'a GpSurrogate,
    best: f64,
    xi: f64,
}

impl CostFunction for NegEi<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, ArgminError> {
        Ok(-ei_at(self.gp, &clamp_unit(p), self.best, self.xi))
    }
}

/// Next query in `[0, 1]^d`: EI maximised by random multistart plus
/// simplex refinement of the best candidates.
pub fn bo_suggest<R: Rng + ?Sized>(gp: &GpSurrogate, config: &BoConfig, rng: &mut R) -> Result<Vec<f64>> {
    let (xs, ys) = gp.observations();
    let dim = xs.first().map(Vec::len).ok_or_else(|| AgentError::Config("empty surrogate".into()))?;
    let best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..config.candidates)
        .map(|_| {
            let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            (ei_at(gp, &p, best, config.xi), p)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut winner = scored[0].clone();
    for (score, start) in scored.into_iter().take(config.refine) {
        let mut simplex = vec![start.clone()];
        for i in 0..dim {
            let mut p = start.clone();
            p[i] += if p[i] > 0.5 { -0.05 } else { 0.05 };
            simplex.push(p);
        }
        let solver =
            NelderMead::new(simplex).with_sd_tolerance(1e-10).map_err(|e| AgentError::Config(e.to_string()))?;
        let res = Executor::new(NegEi { gp, best, xi: config.xi }, solver)
            .configure(|s| s.max_iters(config.refine_iters))
            .run()
            .map_err(|e| AgentError::Config(format!("EI refinement failed: {e}")))?;
        let p = clamp_unit(res.state().get_best_param().map_or(&start, |p| p));
        let refined = ei_at(gp, &p, best, config.xi);
        let (s, p) = if refined > score { (refined, p) } else { (score, start) };
        if s > winner.0 {
            winner = (s, p);
        }
    }
    Ok(winner.1)
}

/// Every query (in order) and the objective value it returned.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoHistory {
    pub queries: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl BoHistory {
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, &v)| (&self.queries[i][..], v))
    }

    /// Per-step absolute change of each coordinate between consecutive queries.
    pub fn step_sizes(&self) -> Vec<Vec<f64>> {
        self.queries.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).abs()).collect()).collect()
    }
}

/// Maximise `objective` over `[0, 1]^dim` with `budget` evaluations.
/// The first query is `start` when given; the rest of the initial design is
/// uniform random.
pub fn bo_run<F, R>(
    mut objective: F,
    dim: usize,
    budget: usize,
    start: Option<Vec<f64>>,
    config: &BoConfig,
    rng: &mut R,
) -> Result<BoHistory>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    config.validate()?;
    if dim == 0 {
        return Err(AgentError::Config("BO dimension must be positive".into()));
    }
    if start.as_ref().is_some_and(|s| s.len() != dim || s.iter().any(|v| !(0.0..=1.0).contains(v))) {
        return Err(AgentError::Config("BO start must lie in the unit box".into()));
    }
    let mut hist = BoHistory::default();
    let mut hyper = GpHyper::isotropic(dim, 0.3, 1.0, 1e-4);
    let mut last_fit = 0;
    for i in 0..budget {
        let q = if i < config.init_points {
            match (i, &start) {
                (0, Some(s)) => s.clone(),
                _ => (0..dim).map(|_| rng.random::<f64>()).collect(),
            }
        } else {
            let n = hist.values.len();
            let gp = if last_fit == 0 || n - last_fit >= config.refit_every {
                last_fit = n;
                let gp =
                    GpSurrogate::fit_optimized(hist.queries.clone(), hist.values.clone(), &hyper, config.hyper_iters)?;
                hyper = gp.hyper.clone();
                gp
            } else {
                GpSurrogate::fit(hist.queries.clone(), hist.values.clone(), hyper.clone())?
            };
            bo_suggest(&gp, config, rng)?
        };
        let v = objective(&q)?;
        if !v.is_finite() {
            return Err(AgentError::NonFinite(format!("objective at BO query {i}")));
        }
        hist.queries.push(q);
        hist.values.push(v);
    }
    Ok(hist)
}
