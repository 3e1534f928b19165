//! Coordinate-wise 1D grid search.

use pulsectl_core::Exec;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Vec<f64>,
    pub value: f64,
    /// Every evaluated point with its value, in sweep order.
    pub evaluations: Vec<(Vec<f64>, f64)>,
}

/// Sweep each coordinate in index order over `resolution` evenly spaced
/// values in `[lo, hi]`, holding the others at the incumbent, and move the
/// incumbent to the best value found. Exactly `dim * resolution` evaluations.
pub fn grid_search_1d<F>(
    objective: F,
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
    start: &[f64],
    exec: Exec,
) -> Result<GridResult>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if lo.len() != hi.len() || lo.len() != start.len() || lo.is_empty() {
        return Err(AgentError::Config("grid bounds and start must have the same non-zero dimension".into()));
    }
    if resolution < 2 {
        return Err(AgentError::Config("grid resolution must be at least 2".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(AgentError::Config("grid bounds must satisfy lo < hi".into()));
    }
    let mut best = start.to_vec();
    let mut value = f64::NEG_INFINITY;
    let mut evaluations = Vec::with_capacity(lo.len() * resolution);
    for d in 0..lo.len() {
        let points: Vec<Vec<f64>> = (0..resolution)
            .map(|k| {
                let mut p = best.clone();
                p[d] = lo[d] + (hi[d] - lo[d]) * k as f64 / (resolution - 1) as f64;
                p
            })
            .collect();
        let values = exec.map(&points, |p| objective(p));
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AgentError::NonFinite(format!("grid objective at {:?}", points[i])));
        }
        for (p, v) in points.into_iter().zip(values) {
            if v > value {
                value = v;
                best = p.clone();
            }
            evaluations.push((p, v));
        }
    }
    Ok(GridResult { best, value, evaluations })
}
