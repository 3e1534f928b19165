//! Spectral-domain pulse representation, dispersion phases, time/frequency
//! transforms and pulse metrics.
//!
//! Conventions: a grid of `n` samples covers angular-frequency offsets
//! `delta_k = (k - n/2) * d_omega` around `omega0`, and times
//! `t_j = (j - n/2) * dt` with `dt = 2 pi / (n d_omega)`. The transform pair is
//!
//! ```text
//! E(t_j)     = d_omega / sqrt(2 pi) * sum_k A(delta_k) exp(+i delta_k t_j)
//! A(delta_k) = dt      / sqrt(2 pi) * sum_j E(t_j)     exp(-i delta_k t_j)
//! ```
//!
//! which is unitary with respect to the measures `d_omega` and `dt`:
//! `sum |A|^2 d_omega == sum |E|^2 dt`.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform angular-frequency grid centred on the carrier.
#[derive(Clone)]
pub struct FrequencyGrid {
    n: usize,
    omega0: f64,
    d_omega: f64,
    fft: Arc<FftPair>,
}

impl fmt::Debug for FrequencyGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrequencyGrid")
            .field("n", &self.n)
            .field("omega0", &self.omega0)
            .field("d_omega", &self.d_omega)
            .finish()
    }
}

impl PartialEq for FrequencyGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.omega0 == other.omega0 && self.d_omega == other.d_omega
    }
}

/// Minimum number of grid samples.
pub const MIN_GRID_POINTS: usize = 64;

impl FrequencyGrid {
    pub fn new(n: usize, omega0: f64, d_omega: f64) -> Result<Self> {
        if n < MIN_GRID_POINTS || !n.is_power_of_two() {
            return Err(Error::config(format!("grid size must be a power of two >= {MIN_GRID_POINTS}, got {n}")));
        }
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(Error::config(format!("omega0 must be positive, got {omega0}")));
        }
        if !(d_omega > 0.0 && d_omega.is_finite()) {
            return Err(Error::config(format!("d_omega must be positive, got {d_omega}")));
        }
        let mut planner = FftPlanner::new();
        let fft = Arc::new(FftPair { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) });
        Ok(Self { n, omega0, d_omega, fft })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn d_omega(&self) -> f64 {
        self.d_omega
    }

    /// Time step in fs.
    pub fn dt(&self) -> f64 {
        2.0 * PI / (self.n as f64 * self.d_omega)
    }

    /// Total angular-frequency span `n * d_omega`.
    pub fn span(&self) -> f64 {
        self.n as f64 * self.d_omega
    }

    /// Offset `omega_k - omega0` of sample `k`.
    pub fn delta(&self, k: usize) -> f64 {
        (k as f64 - (self.n / 2) as f64) * self.d_omega
    }

    pub fn omega(&self, k: usize) -> f64 {
        self.omega0 + self.delta(k)
    }

    pub fn time(&self, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.dt()
    }

    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|k| self.delta(k))
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|j| self.time(j))
    }

    /// Centred inverse DFT with the `d_omega / sqrt(2 pi)` measure.
    fn spectral_to_temporal(&self, spectrum: &[Complex64]) -> Vec<Complex64> {
        let half = self.n / 2;
        let mut buf = spectrum.to_vec();
        buf.rotate_left(half);
        self.fft.inverse.process(&mut buf);
        buf.rotate_left(half);
        let scale = self.d_omega / (2.0 * PI).sqrt();
        buf.iter_mut().for_each(|z| *z *= scale);
        buf
    }

    fn temporal_to_spectral(&self, temporal: &[Complex64]) -> Vec<Complex64> {
        let half = self.n / 2;
        let mut buf = temporal.to_vec();
        buf.rotate_left(half);
        self.fft.forward.process(&mut buf);
        buf.rotate_left(half);
        let scale = self.dt() / (2.0 * PI).sqrt();
        buf.iter_mut().for_each(|z| *z *= scale);
        buf
    }
}

/// Dispersion coefficients: GDD (fs^2), TOD (fs^3), FOD (fs^4).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DispersionCoeffs {
    pub gdd: f64,
    pub tod: f64,
    pub fod: f64,
}

impl DispersionCoeffs {
    pub const ZERO: Self = Self { gdd: 0.0, tod: 0.0, fod: 0.0 };

    pub fn new(gdd: f64, tod: f64, fod: f64) -> Self {
        Self { gdd, tod, fod }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { gdd: a[0], tod: a[1], fod: a[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.gdd, self.tod, self.fod]
    }

    pub fn is_finite(&self) -> bool {
        self.gdd.is_finite() && self.tod.is_finite() && self.fod.is_finite()
    }
}

impl std::ops::Neg for DispersionCoeffs {
    type Output = Self;
    fn neg(self) -> Self {
        Self { gdd: -self.gdd, tod: -self.tod, fod: -self.fod }
    }
}

impl std::ops::Add for DispersionCoeffs {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { gdd: self.gdd + o.gdd, tod: self.tod + o.tod, fod: self.fod + o.fod }
    }
}

/// Spectral phase sampled on a grid (rad).
#[derive(Debug, Clone)]
pub struct PhaseArray {
    pub grid: FrequencyGrid,
    pub phase: Vec<f64>,
}

impl PhaseArray {
    /// Taylor phase of orders 2-4 around `omega0`. Orders 0 and 1 only add a
    /// constant phase and a time shift, so they are omitted.
    pub fn taylor(grid: &FrequencyGrid, psi: DispersionCoeffs) -> Self {
        let phase = grid
            .deltas()
            .map(|d| {
                let d2 = d * d;
                psi.gdd * d2 / 2.0 + psi.tod * d2 * d / 6.0 + psi.fod * d2 * d2 / 24.0
            })
            .collect();
        Self { grid: grid.clone(), phase }
    }

    pub fn negated(&self) -> Self {
        Self { grid: self.grid.clone(), phase: self.phase.iter().map(|p| -p).collect() }
    }
}

/// Shorthand for [`PhaseArray::taylor`].
pub fn taylor_phase(grid: &FrequencyGrid, psi: DispersionCoeffs) -> PhaseArray {
    PhaseArray::taylor(grid, psi)
}

/// Complex spectral amplitude `A(omega)`; `sum |A|^2 d_omega` is the energy.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub grid: FrequencyGrid,
    pub amplitude: Vec<Complex64>,
}

/// Complex temporal envelope `E(t)`; `|E|^2` is the instantaneous power.
#[derive(Debug, Clone)]
pub struct TemporalField {
    pub grid: FrequencyGrid,
    pub amplitude: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: FrequencyGrid, amplitude: Vec<Complex64>) -> Result<Self> {
        if amplitude.len() != grid.n() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, amplitude })
    }

    /// Real Gaussian spectrum centred on `omega0` whose spectral *intensity*
    /// has FWHM `fwhm_bandwidth` (rad/fs), normalised to `energy`.
    pub fn gaussian(grid: &FrequencyGrid, fwhm_bandwidth: f64, energy: f64) -> Result<Self> {
        if !(fwhm_bandwidth > 0.0) || 4.0 * fwhm_bandwidth >= grid.span() {
            return Err(Error::config(format!(
                "spectral bandwidth {fwhm_bandwidth} rad/fs does not fit in grid span {} rad/fs",
                grid.span()
            )));
        }
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::config(format!("pulse energy must be positive, got {energy}")));
        }
        let w2 = fwhm_bandwidth * fwhm_bandwidth;
        let mut amplitude: Vec<Complex64> =
            grid.deltas().map(|d| Complex64::new((-2.0 * LN_2 * d * d / w2).exp(), 0.0)).collect();
        let raw: f64 = amplitude.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.d_omega();
        let scale = (energy / raw).sqrt();
        amplitude.iter_mut().for_each(|a| *a *= scale);
        Ok(Self { grid: grid.clone(), amplitude })
    }

    pub fn energy(&self) -> f64 {
        self.amplitude.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.d_omega()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.amplitude.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Multiply by `exp(i phase)`; spectral intensity is untouched.
    pub fn apply_phase(&self, phase: &PhaseArray) -> Result<Self> {
        if phase.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let amplitude =
            self.amplitude.iter().zip(&phase.phase).map(|(a, &p)| a * Complex64::from_polar(1.0, p)).collect();
        Ok(Self { grid: self.grid.clone(), amplitude })
    }

    pub fn to_time(&self) -> TemporalField {
        TemporalField { grid: self.grid.clone(), amplitude: self.grid.spectral_to_temporal(&self.amplitude) }
    }

    /// Zero-phase pulse with the same spectral magnitude.
    pub fn transform_limited(&self) -> Result<TemporalField> {
        if self.amplitude.iter().all(|a| a.norm_sqr() == 0.0) {
            return Err(Error::ZeroField("transform-limited reference"));
        }
        let flat = SpectralField {
            grid: self.grid.clone(),
            amplitude: self.amplitude.iter().map(|a| Complex64::new(a.norm(), 0.0)).collect(),
        };
        Ok(flat.to_time())
    }

    /// FWHM of the spectral intensity in rad/fs.
    pub fn spectral_fwhm(&self) -> Result<f64> {
        fwhm_of_samples(&self.intensity(), self.grid.d_omega())
    }
}

impl TemporalField {
    pub fn new(grid: FrequencyGrid, amplitude: Vec<Complex64>) -> Result<Self> {
        if amplitude.len() != grid.n() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, amplitude })
    }

    pub fn energy(&self) -> f64 {
        self.amplitude.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dt()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.amplitude.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn to_frequency(&self) -> SpectralField {
        SpectralField { grid: self.grid.clone(), amplitude: self.grid.temporal_to_spectral(&self.amplitude) }
    }

    /// Maximum of `|E(t)|^2` over the window.
    pub fn peak_intensity(&self) -> f64 {
        self.amplitude.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max)
    }

    /// Full width at half maximum of the temporal intensity (fs).
    pub fn fwhm(&self) -> Result<f64> {
        fwhm_of_samples(&self.intensity(), self.grid.dt())
    }
}

/// Width between the outermost half-maximum crossings of a sampled profile,
/// each located by linear interpolation between neighbouring samples.
///
/// Fails when the profile is zero or when it does not drop below half
/// maximum before either edge of the window.
pub fn fwhm_of_samples(intensity: &[f64], step: f64) -> Result<f64> {
    let peak = intensity.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ZeroField("FWHM of a zero profile"));
    }
    let half = 0.5 * peak;
    let left = intensity.iter().position(|&v| v >= half).expect("peak sample exists");
    let right = intensity.iter().rposition(|&v| v >= half).expect("peak sample exists");
    if left == 0 || right + 1 == intensity.len() {
        return Err(Error::Measurement(
            "profile does not fall below half maximum inside the window; enlarge the grid".into(),
        ));
    }
    // Crossing positions in units of samples.
    let (a, b) = (intensity[left - 1], intensity[left]);
    let x_left = (left - 1) as f64 + (half - a) / (b - a);
    let (c, d) = (intensity[right], intensity[right + 1]);
    let x_right = right as f64 + (c - half) / (c - d);
    Ok((x_right - x_left) * step)
}
