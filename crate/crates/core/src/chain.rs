//! Chirped-pulse-amplification forward model.
//!
//! The seed pulse is stretched by the controllable phase `psi`, amplified by a
//! lumped element with scalar energy gain and self-phase modulation whose peak
//! nonlinear phase equals the B-integral, and re-compressed by the fixed
//! compressor phase `psi_c`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pulse::{taylor_phase, DispersionCoeffs, FrequencyGrid, PhaseArray, SpectralField, TemporalField};

/// Frequency-grid parameters as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    /// Central vacuum wavelength in nm.
    pub wavelength_nm: f64,
    /// Angular-frequency step in rad/fs.
    pub d_omega: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 4096, wavelength_nm: 1030.0, d_omega: 0.0005 }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<FrequencyGrid> {
        if !(self.wavelength_nm > 0.0) {
            return Err(Error::config(format!("wavelength must be positive, got {}", self.wavelength_nm)));
        }
        FrequencyGrid::new(self.n, crate::omega_from_wavelength_nm(self.wavelength_nm), self.d_omega)
    }
}

/// Seed spectrum: Gaussian with the given intensity FWHM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Spectral intensity FWHM in rad/fs.
    pub fwhm_bandwidth: f64,
    pub energy: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { fwhm_bandwidth: 0.0178, energy: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub grid: GridConfig,
    pub spectrum: SpectrumConfig,
    /// Fixed compressor dispersion `psi_c`.
    pub compressor: DispersionCoeffs,
    /// Default amplifier energy gain.
    pub gain: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            spectrum: SpectrumConfig::default(),
            compressor: DispersionCoeffs::new(-2.5e5, 2.0e6, 0.0),
            gain: 1.0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.compressor.is_finite() {
            return Err(Error::config("compressor dispersion must be finite"));
        }
        if !(self.gain >= 1.0 && self.gain.is_finite()) {
            return Err(Error::config(format!("gain must be >= 1, got {}", self.gain)));
        }
        let grid = self.grid.build()?;
        SpectralField::gaussian(&grid, self.spectrum.fwhm_bandwidth, self.spectrum.energy)?;
        Ok(())
    }
}

/// Hidden dynamics parameters of one amplification run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentDynamics {
    /// Peak accumulated nonlinear phase (rad).
    pub b_integral: f64,
    /// Energy gain, >= 1.
    pub gain: f64,
}

impl LatentDynamics {
    pub fn new(b_integral: f64, gain: f64) -> Result<Self> {
        let d = Self { b_integral, gain };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_integral >= 0.0 && self.b_integral.is_finite()) {
            return Err(Error::config(format!("B-integral must be >= 0, got {}", self.b_integral)));
        }
        if !(self.gain >= 1.0 && self.gain.is_finite()) {
            return Err(Error::config(format!("gain must be >= 1, got {}", self.gain)));
        }
        Ok(())
    }
}

/// Apply the stretcher phase `psi`.
pub fn stretch(field: &SpectralField, psi: DispersionCoeffs) -> SpectralField {
    field.apply_phase(&taylor_phase(&field.grid, psi)).expect("phase built on the field's own grid")
}

/// Lumped amplifier: `E_out(t) = sqrt(g) E_in(t) exp(i B P(t) / P_peak)`.
pub fn amplify(field: &SpectralField, dynamics: LatentDynamics) -> Result<SpectralField> {
    let mut temporal = field.to_time();
    let peak = temporal.peak_intensity();
    if !(peak > 0.0) {
        return Err(Error::ZeroField("amplifier input"));
    }
    let amp = dynamics.gain.sqrt();
    let b_over_peak = dynamics.b_integral / peak;
    for e in temporal.amplitude.iter_mut() {
        let phi = b_over_peak * e.norm_sqr();
        *e *= Complex64::from_polar(amp, phi);
    }
    Ok(temporal.to_frequency())
}

/// The full stretcher-amplifier-compressor chain for one configuration.
#[derive(Debug, Clone)]
pub struct PumpChain {
    config: ChainConfig,
    grid: FrequencyGrid,
    seed: SpectralField,
    compressor_phase: PhaseArray,
    tl_peak: f64,
}

impl PumpChain {
    pub fn new(config: ChainConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid.build()?;
        let seed = SpectralField::gaussian(&grid, config.spectrum.fwhm_bandwidth, config.spectrum.energy)?;
        let compressor_phase = taylor_phase(&grid, config.compressor);
        let tl_peak = seed.transform_limited()?.peak_intensity() * config.gain;
        Ok(Self { config, grid, seed, compressor_phase, tl_peak })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn seed(&self) -> &SpectralField {
        &self.seed
    }

    /// The compressor-cancelling stretcher setting `-psi_c`.
    pub fn cancelling_psi(&self) -> DispersionCoeffs {
        -self.config.compressor
    }

    /// Latent dynamics with the configured default gain.
    pub fn dynamics(&self, b_integral: f64) -> Result<LatentDynamics> {
        LatentDynamics::new(b_integral, self.config.gain)
    }

    pub fn compress(&self, field: &SpectralField) -> Result<SpectralField> {
        field.apply_phase(&self.compressor_phase)
    }

    /// Output temporal field for stretcher setting `psi` under `dynamics`.
    pub fn propagate(&self, psi: DispersionCoeffs, dynamics: LatentDynamics) -> Result<TemporalField> {
        if !psi.is_finite() {
            return Err(Error::config("stretcher dispersion must be finite"));
        }
        dynamics.validate()?;
        let stretched = stretch(&self.seed, psi);
        let amplified = amplify(&stretched, dynamics)?;
        Ok(self.compress(&amplified)?.to_time())
    }

    /// Peak intensity of the transform-limited seed scaled by the configured
    /// gain. Constant for a configuration.
    pub fn tl_reference(&self) -> f64 {
        self.tl_peak
    }

    /// Unclipped ratio of output peak intensity to the TL reference.
    pub fn intensity_ratio(&self, psi: DispersionCoeffs, dynamics: LatentDynamics) -> Result<f64> {
        Ok(self.propagate(psi, dynamics)?.peak_intensity() / self.tl_peak)
    }

    /// [`intensity_ratio`](Self::intensity_ratio) over a batch of settings,
    /// in input order.
    pub fn intensity_ratios(&self, settings: &[(DispersionCoeffs, LatentDynamics)], exec: Exec) -> Result<Vec<f64>> {
        exec.map(settings, |&(psi, dynamics)| self.intensity_ratio(psi, dynamics)).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::LN_2;

    fn chain() -> PumpChain {
        PumpChain::new(ChainConfig::default()).unwrap()
    }

    #[test]
    fn stretch_identity_and_intensity() {
        let c = chain();
        let s = stretch(c.seed(), DispersionCoeffs::ZERO);
        assert_eq!(s.amplitude, c.seed().amplitude);
        let s = stretch(c.seed(), DispersionCoeffs::new(2.5e5, 1.0e6, 0.0));
        for (a, b) in s.intensity().iter().zip(c.seed().intensity()) {
            assert_relative_eq!(*a, b, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn stretch_factor_matches_gaussian_broadening() {
        let c = chain();
        let tau0 = c.seed().transform_limited().unwrap().fwhm().unwrap();
        let gdd = 2.5e5;
        let tau = stretch(c.seed(), DispersionCoeffs::new(gdd, 0.0, 0.0)).to_time().fwhm().unwrap();
        let x = 4.0 * LN_2 * gdd / (tau0 * tau0);
        let expected = (1.0 + x * x).sqrt();
        assert_relative_eq!(tau / tau0, expected, max_relative = 0.01);
        assert!((tau / tau0 - 28.5).abs() < 0.3);
    }

    #[test]
    fn amplify_without_nonlinearity_scales_amplitude() {
        let c = chain();
        let s = stretch(c.seed(), DispersionCoeffs::new(1.0e5, 0.0, 0.0));
        let out = amplify(&s, LatentDynamics::new(0.0, 4.0).unwrap()).unwrap();
        for (a, b) in out.amplitude.iter().zip(&s.amplitude) {
            assert!((a - b * 2.0).norm() < 1e-12 * s.amplitude[2048].norm());
        }
        assert_relative_eq!(out.energy(), 4.0 * s.energy(), max_relative = 1e-12);
    }

    #[test]
    fn amplify_is_phase_only_in_time() {
        let c = chain();
        let s = stretch(c.seed(), DispersionCoeffs::new(1.0e5, 0.0, 0.0));
        let out = amplify(&s, LatentDynamics::new(2.5, 2.0).unwrap()).unwrap().to_time();
        let inp = s.to_time();
        let peak = inp.peak_intensity();
        for (a, b) in out.intensity().iter().zip(inp.intensity()) {
            assert!((a - 2.0 * b).abs() < 1e-10 * peak);
        }
    }

    #[test]
    fn spm_broadens_the_spectrum() {
        let c = chain();
        let s = stretch(c.seed(), DispersionCoeffs::new(2.0e4, 0.0, 0.0));
        let linear = amplify(&s, LatentDynamics::new(0.0, 1.0).unwrap()).unwrap().spectral_fwhm().unwrap();
        let nonlinear = amplify(&s, LatentDynamics::new(2.0, 1.0).unwrap()).unwrap().spectral_fwhm().unwrap();
        assert!(nonlinear > linear * 1.01, "{nonlinear} vs {linear}");
    }

    #[test]
    fn amplify_rejects_zero_field() {
        let c = chain();
        let zero = SpectralField::new(c.grid().clone(), vec![Complex64::new(0.0, 0.0); c.grid().n()]).unwrap();
        assert!(amplify(&zero, LatentDynamics::new(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn compress_cancels_stretch() {
        let c = chain();
        let back = c.compress(&stretch(c.seed(), c.cancelling_psi())).unwrap();
        let scale = c.seed().amplitude[2048].norm();
        for (a, b) in back.amplitude.iter().zip(&c.seed().amplitude) {
            assert!((a - b).norm() <= 1e-12 * scale);
        }
        let zero_c = PumpChain::new(ChainConfig { compressor: DispersionCoeffs::ZERO, ..Default::default() }).unwrap();
        assert_eq!(zero_c.compress(zero_c.seed()).unwrap().amplitude, zero_c.seed().amplitude);
    }

    #[test]
    fn cancellation_gives_transform_limit() {
        let c = chain();
        let ratio = c.intensity_ratio(c.cancelling_psi(), c.dynamics(0.0).unwrap()).unwrap();
        assert_relative_eq!(ratio, 1.0, max_relative = 1e-6);
        let ratio_b2 = c.intensity_ratio(c.cancelling_psi(), c.dynamics(2.0).unwrap()).unwrap();
        assert!(ratio_b2 < 1.0);
    }

    #[test]
    fn b_integral_changes_pulse_duration() {
        let c = chain();
        let psi = c.cancelling_psi();
        let lo = c.propagate(psi, c.dynamics(0.5).unwrap()).unwrap().fwhm().unwrap();
        let hi = c.propagate(psi, c.dynamics(3.83).unwrap()).unwrap().fwhm().unwrap();
        assert!((lo - hi).abs() > 1.0, "{lo} vs {hi}");
    }

    #[test]
    fn tl_reference_scales_with_gain() {
        let g1 = chain();
        let g4 = PumpChain::new(ChainConfig { gain: 4.0, ..Default::default() }).unwrap();
        assert_relative_eq!(g1.tl_reference(), g1.seed().transform_limited().unwrap().peak_intensity());
        assert_relative_eq!(g4.tl_reference(), 4.0 * g1.tl_reference(), max_relative = 1e-14);
    }

    #[test]
    fn energy_scales_with_gain() {
        let c = PumpChain::new(ChainConfig { gain: 3.0, ..Default::default() }).unwrap();
        for b in [0.0, 1.0, 3.5] {
            let out = c
                .propagate(c.cancelling_psi() + DispersionCoeffs::new(1.0e4, -5.0e4, 1.0e5), c.dynamics(b).unwrap())
                .unwrap();
            assert_relative_eq!(out.energy(), 3.0 * c.seed().energy(), max_relative = 1e-9);
        }
    }

    #[test]
    fn propagate_is_deterministic() {
        let c = chain();
        let psi = c.cancelling_psi() + DispersionCoeffs::new(1.3e4, 2.0e5, -1.0e6);
        let a = c.propagate(psi, c.dynamics(2.17).unwrap()).unwrap();
        let b = c.propagate(psi, c.dynamics(2.17).unwrap()).unwrap();
        assert_eq!(a.amplitude, b.amplitude);
    }

    #[test]
    fn batch_ratios_match_single_calls() {
        let c = chain();
        let settings: Vec<_> = (0..6)
            .map(|k| {
                let psi = c.cancelling_psi() + DispersionCoeffs::new(4e3 * k as f64, 0.0, 0.0);
                (psi, c.dynamics(0.5 * k as f64).unwrap())
            })
            .collect();
        let seq = c.intensity_ratios(&settings, Exec::Sequential).unwrap();
        let par = c.intensity_ratios(&settings, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        for (r, &(psi, d)) in seq.iter().zip(&settings) {
            assert_eq!(*r, c.intensity_ratio(psi, d).unwrap());
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(LatentDynamics::new(-0.1, 1.0).is_err());
        assert!(LatentDynamics::new(1.0, 0.5).is_err());
        assert!(PumpChain::new(ChainConfig { gain: 0.5, ..Default::default() }).is_err());
        let c = chain();
        assert!(c.propagate(DispersionCoeffs::new(f64::NAN, 0.0, 0.0), c.dynamics(0.0).unwrap()).is_err());
    }
}
