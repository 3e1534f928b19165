//! Gaussian-process regression with an anisotropic RBF kernel.
//!
//! Targets are standardised before fitting; predictions are returned in the
//! original units. The predictive variance is that of the latent function
//! (observation noise excluded).

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};

const JITTERS: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];
const LENGTH_BOUNDS: (f64, f64) = (0.01, 10.0);
const SIGNAL_BOUNDS: (f64, f64) = (0.01, 100.0);
const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn isotropic(dim: usize, length: f64, signal_var: f64, noise_var: f64) -> Self {
        Self { length_scales: vec![length; dim], signal_var, noise_var }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(theta: &[f64]) -> Self {
        let clamp = |x: f64, (lo, hi): (f64, f64)| x.exp().clamp(lo, hi);
        let d = theta.len() - 2;
        Self {
            length_scales: theta[..d].iter().map(|&t| clamp(t, LENGTH_BOUNDS)).collect(),
            signal_var: clamp(theta[d], SIGNAL_BOUNDS),
            noise_var: clamp(theta[d + 1], NOISE_BOUNDS),
        }
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).zip(&self.length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
        self.signal_var * (-0.5 * r2).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    pub hyper: GpHyper,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    chol_l: DMatrix<f64>,
    weights: DVector<f64>,
    /// Diagonal jitter that made the covariance factorisable.
    pub jitter: f64,
}

fn standardise(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (y.iter().map(|v| (v - mean) / std).collect(), mean, std)
}

/// Cholesky factor of `K + noise I`, escalating diagonal jitter on failure.
fn factor(x: &[Vec<f64>], hyper: &GpHyper) -> Result<(DMatrix<f64>, f64)> {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| hyper.kernel(&x[i], &x[j]));
    for rel in JITTERS {
        let jitter = rel * hyper.signal_var;
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += hyper.noise_var + jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.l(), jitter));
        }
    }
    Err(AgentError::IllConditioned(format!(
        "{n} points, length scales {:?}, noise {:.3e}",
        hyper.length_scales, hyper.noise_var
    )))
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l.solve_lower_triangular(b).expect("non-singular factor");
    l.transpose().solve_upper_triangular(&z).expect("non-singular factor")
}

/// Negative log marginal likelihood of standardised targets.
pub fn neg_log_marginal_likelihood(x: &[Vec<f64>], y_std: &[f64], hyper: &GpHyper) -> Result<f64> {
    let (l, _) = factor(x, hyper)?;
    let y = DVector::from_column_slice(y_std);
    let alpha = cholesky_solve(&l, &y);
    let log_det: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    let n = y_std.len() as f64;
    Ok(0.5 * y.dot(&alpha) + log_det + 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

struct Nll<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
}

impl CostFunction for Nll<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, ArgminError> {
        Ok(neg_log_marginal_likelihood(self.x, self.y, &GpHyper::from_log(theta))
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(1e10))
    }
}

impl GpSurrogate {
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: GpHyper) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(AgentError::Config("GP needs matching, non-empty inputs and targets".into()));
        }
        if x.iter().any(|p| p.len() != hyper.length_scales.len()) {
            return Err(AgentError::Config("GP input dimension does not match the kernel".into()));
        }
        if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(AgentError::NonFinite("GP training data".into()));
        }
        let (ys, y_mean, y_std) = standardise(&y);
        let (chol_l, jitter) = factor(&x, &hyper)?;
        let weights = cholesky_solve(&chol_l, &DVector::from_vec(ys));
        Ok(Self { hyper, x, y, y_mean, y_std, chol_l, weights, jitter })
    }

    /// Fit after choosing hyperparameters by marginal likelihood, starting from `init`.
    pub fn fit_optimized(x: Vec<Vec<f64>>, y: Vec<f64>, init: &GpHyper, max_iters: u64) -> Result<Self> {
        let hyper = optimize_hyper(&x, &y, init, max_iters)?;
        Self::fit(x, y, hyper)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn observations(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.x, &self.y)
    }

    /// Predictive mean and latent variance at `p`, in target units.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.hyper.kernel(xi, p)));
        let mean = k.dot(&self.weights);
        let v = self.chol_l.solve_lower_triangular(&k).expect("non-singular factor");
        let var = (self.hyper.signal_var - v.dot(&v)).max(0.0);
        // Rounding leaves O(eps * signal_var) residue at training points.
        let var = if var <= 1e-10 * self.hyper.signal_var { 0.0 } else { var };
        (self.y_mean + self.y_std * mean, var * self.y_std * self.y_std)
    }
}

/// Minimise the negative log marginal likelihood in log space with
/// Nelder-Mead; parameters are clamped to fixed plausible ranges.
pub fn optimize_hyper(x: &[Vec<f64>], y: &[f64], init: &GpHyper, max_iters: u64) -> Result<GpHyper> {
    let (ys, _, _) = standardise(y);
    let theta0 = init.to_log();
    let mut simplex = vec![theta0.clone()];
    for i in 0..theta0.len() {
        let mut t = theta0.clone();
        t[i] += 0.5;
        simplex.push(t);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-6).map_err(|e| AgentError::Config(e.to_string()))?;
    let res = Executor::new(Nll { x, y: &ys }, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|e| AgentError::Config(format!("hyperparameter fit failed: {e}")))?;
    let best = res.state().get_best_param().cloned().unwrap_or(theta0);
    let hyper = GpHyper::from_log(&best);
    // Fail here rather than later if nothing factorises.
    factor(x, &hyper)?;
    Ok(hyper)
}
