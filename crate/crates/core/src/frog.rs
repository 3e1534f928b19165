//! SHG FROG trace synthesis and image rendering.
//!
//! A raw trace is `|sum_t E(t) E(t - tau) exp(-i w t) dt|^2` sampled on a
//! delay grid symmetric about zero and on frequency offsets around `2 omega0`.
//! Images are produced by area-averaging the raw trace onto a fixed
//! delay/frequency window and dividing by the maximum.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pulse::{FrequencyGrid, SpectralField, TemporalField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrogConfig {
    /// Image delay window is `[-delay_half_span, delay_half_span]` fs.
    pub delay_half_span: f64,
    /// Image frequency window is `2 omega0 +- freq_half_span` rad/fs.
    pub freq_half_span: f64,
    /// Number of raw delays (odd, so that zero delay is sampled).
    pub delay_samples: usize,
    /// Output image side length.
    pub image_size: usize,
    /// Half-width (rad/fs) of the field spectrum kept for synthesis. The field
    /// is resampled onto the coarsest time grid that carries this band.
    pub band_half_width: f64,
    /// Logarithmic intensity scaling over `log_decades` decades.
    pub log_scale: bool,
    pub log_decades: f64,
}

impl Default for FrogConfig {
    fn default() -> Self {
        Self {
            delay_half_span: 6000.0,
            freq_half_span: 0.08,
            delay_samples: 129,
            image_size: 64,
            band_half_width: 0.256,
            log_scale: false,
            log_decades: 3.0,
        }
    }
}

impl FrogConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay_half_span > 0.0) || !(self.freq_half_span > 0.0) {
            return Err(Error::config("FROG spans must be positive"));
        }
        if self.delay_samples < 65 || self.delay_samples.is_multiple_of(2) {
            return Err(Error::config(format!("FROG delay_samples must be odd and >= 65, got {}", self.delay_samples)));
        }
        if self.image_size == 0 {
            return Err(Error::config("FROG image size must be positive"));
        }
        if self.band_half_width < self.freq_half_span {
            return Err(Error::config("FROG band_half_width must cover freq_half_span"));
        }
        if self.log_scale && !(self.log_decades > 0.0) {
            return Err(Error::config("FROG log_decades must be positive"));
        }
        Ok(())
    }
}

/// Raw trace: `data[f * delays.len() + d]` for frequency offset `f` and delay `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    /// Delays in fs, symmetric about zero.
    pub delays: Vec<f64>,
    /// Frequency offsets from `2 omega0` in rad/fs.
    pub freqs: Vec<f64>,
    pub delay_step: f64,
    pub freq_step: f64,
    pub data: Vec<f64>,
}

impl RawTrace {
    pub fn n_delay(&self) -> usize {
        self.delays.len()
    }

    pub fn n_freq(&self) -> usize {
        self.freqs.len()
    }

    pub fn at(&self, f: usize, d: usize) -> f64 {
        self.data[f * self.delays.len() + d]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { data: self.data.iter().map(|v| v * k).collect(), ..self.clone() }
    }

    /// Intensity-weighted second moment of the delay axis (fs^2).
    pub fn delay_second_moment(&self) -> f64 {
        let nd = self.n_delay();
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, v) in self.data.iter().enumerate() {
            let tau = self.delays[i % nd];
            num += v * tau * tau;
            den += v;
        }
        num / den
    }
}

/// A normalised `size x size` trace image; rows index frequency (ascending),
/// columns index delay (ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrogTrace {
    pub size: usize,
    pub pixels: Vec<f64>,
    /// Full delay extent of the image (fs).
    pub delay_span: f64,
    /// Full frequency extent of the image (rad/fs).
    pub freq_span: f64,
}

impl FrogTrace {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row/column of the brightest pixel (first on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.pixels.iter().enumerate() {
            if v > self.pixels[best] {
                best = i;
            }
        }
        (best / self.size, best % self.size)
    }

    /// 8-bit quantisation used for PNG output: `round(255 v)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }
}

pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Reusable SHG FROG synthesiser bound to a simulation grid.
#[derive(Debug, Clone)]
pub struct FrogSynth {
    config: FrogConfig,
    source: FrequencyGrid,
    reduced: FrequencyGrid,
    delay_shift: usize,
    freq_bins: Vec<usize>,
}

impl FrogSynth {
    pub fn new(grid: &FrequencyGrid, config: FrogConfig) -> Result<Self> {
        config.validate()?;
        let n = grid.n();
        let dw = grid.d_omega();
        let mut m = crate::pulse::MIN_GRID_POINTS;
        while m < n && (m as f64) * dw / 2.0 < config.band_half_width {
            m *= 2;
        }
        let m = m.min(n);
        let reduced = FrequencyGrid::new(m, grid.omega0(), dw)?;
        let half = (config.delay_samples - 1) / 2;
        let needed = 2.0 * config.delay_half_span / (config.delay_samples - 1) as f64;
        let delay_shift = ((needed / reduced.dt()) - 1e-9).ceil().max(1.0) as usize;
        if half * delay_shift >= m {
            return Err(Error::config(format!(
                "FROG delay window +-{} fs exceeds the simulation window of {:.0} fs",
                config.delay_half_span,
                m as f64 * reduced.dt()
            )));
        }
        let margin = config.freq_half_span + dw;
        let freq_bins: Vec<usize> = (0..m).filter(|&k| reduced.delta(k).abs() <= margin).collect();
        if freq_bins.len() < 64 {
            return Err(Error::config(format!(
                "FROG frequency window holds only {} samples; need at least 64",
                freq_bins.len()
            )));
        }
        Ok(Self { config, source: grid.clone(), reduced, delay_shift, freq_bins })
    }

    pub fn config(&self) -> &FrogConfig {
        &self.config
    }

    /// Time step (fs) of the resampled field used for synthesis.
    pub fn synthesis_dt(&self) -> f64 {
        self.reduced.dt()
    }

    /// Raw SHG FROG trace of `field`.
    pub fn raw(&self, field: &TemporalField) -> Result<RawTrace> {
        self.raw_with(field, Exec::default())
    }

    pub fn raw_with(&self, field: &TemporalField, exec: Exec) -> Result<RawTrace> {
        if field.grid != self.source {
            return Err(Error::GridMismatch);
        }
        if field.peak_intensity() == 0.0 {
            return Err(Error::ZeroField("FROG input"));
        }
        let e = self.band_limited(field);
        let m = e.len();
        let dt = self.reduced.dt();
        let half = (self.config.delay_samples - 1) / 2;
        let nd = self.config.delay_samples;
        let scale = (2.0 * std::f64::consts::PI).sqrt();

        let columns: Vec<Vec<f64>> = exec.map_range(nd, |d| {
            let shift = d as isize - half as isize;
            let s = shift * self.delay_shift as isize;
            let gate: Vec<Complex64> = (0..m as isize)
                .map(|j| {
                    let k = j - s;
                    if k < 0 || k >= m as isize {
                        Complex64::new(0.0, 0.0)
                    } else {
                        e[j as usize] * e[k as usize]
                    }
                })
                .collect();
            let g = TemporalField { grid: self.reduced.clone(), amplitude: gate };
            let spec = g.to_frequency();
            self.freq_bins.iter().map(|&k| (spec.amplitude[k] * scale).norm_sqr()).collect()
        });

        let nf = self.freq_bins.len();
        let mut data = vec![0.0; nf * nd];
        for (d, col) in columns.iter().enumerate() {
            for (f, v) in col.iter().enumerate() {
                data[f * nd + d] = *v;
            }
        }
        let step = self.delay_shift as f64 * dt;
        Ok(RawTrace {
            delays: (0..nd).map(|d| (d as f64 - half as f64) * step).collect(),
            freqs: self.freq_bins.iter().map(|&k| self.reduced.delta(k)).collect(),
            delay_step: step,
            freq_step: self.reduced.d_omega(),
            data,
        })
    }

    /// Normalised image of `field`.
    pub fn trace(&self, field: &TemporalField) -> Result<FrogTrace> {
        to_image(&self.raw(field)?, &self.config)
    }

    pub fn trace_with(&self, field: &TemporalField, exec: Exec) -> Result<FrogTrace> {
        to_image(&self.raw_with(field, exec)?, &self.config)
    }

    /// Field resampled onto the reduced grid, keeping the central spectral band.
    fn band_limited(&self, field: &TemporalField) -> Vec<Complex64> {
        let n = self.source.n();
        let m = self.reduced.n();
        if m == n {
            return field.amplitude.clone();
        }
        let spec = field.to_frequency();
        let start = n / 2 - m / 2;
        let band = SpectralField { grid: self.reduced.clone(), amplitude: spec.amplitude[start..start + m].to_vec() };
        band.to_time().amplitude
    }
}

/// Synthesize a raw trace with a one-off synthesiser.
pub fn shg_frog(field: &TemporalField, config: &FrogConfig) -> Result<RawTrace> {
    FrogSynth::new(&field.grid, config.clone())?.raw(field)
}

/// Overlap weights of uniform cells (centres `centres`, width `cell`) with
/// `pixels` equal bins over `[-half_span, half_span]`, normalised per pixel.
fn area_weights(centres: &[f64], cell: f64, half_span: f64, pixels: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let width = 2.0 * half_span / pixels as f64;
    (0..pixels)
        .map(|p| {
            let lo = -half_span + p as f64 * width;
            let hi = lo + width;
            let mut row = Vec::new();
            let mut total = 0.0;
            for (i, &c) in centres.iter().enumerate() {
                let overlap = (hi.min(c + cell / 2.0) - lo.max(c - cell / 2.0)).max(0.0);
                if overlap > 0.0 {
                    row.push((i, overlap));
                    total += overlap;
                }
            }
            if total < width * (1.0 - 1e-9) {
                return Err(Error::config("raw trace does not cover the image window"));
            }
            row.iter_mut().for_each(|(_, w)| *w /= total);
            Ok(row)
        })
        .collect()
}

/// Crop, area-average and max-normalise a raw trace into an image.
pub fn to_image(raw: &RawTrace, config: &FrogConfig) -> Result<FrogTrace> {
    if raw.data.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Measurement("raw FROG trace must be non-negative".into()));
    }
    let size = config.image_size;
    let wd = area_weights(&raw.delays, raw.delay_step, config.delay_half_span, size)?;
    let wf = area_weights(&raw.freqs, raw.freq_step, config.freq_half_span, size)?;
    let nd = raw.n_delay();

    // Delay axis first: tmp[f][col].
    let mut tmp = vec![0.0; raw.n_freq() * size];
    for f in 0..raw.n_freq() {
        let row = &raw.data[f * nd..(f + 1) * nd];
        for (c, weights) in wd.iter().enumerate() {
            tmp[f * size + c] = weights.iter().map(|&(d, w)| w * row[d]).sum();
        }
    }
    let mut pixels = vec![0.0; size * size];
    for (r, weights) in wf.iter().enumerate() {
        for c in 0..size {
            pixels[r * size + c] = weights.iter().map(|&(f, w)| w * tmp[f * size + c]).sum();
        }
    }
    let max = pixels.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::ZeroField("FROG image"));
    }
    for p in pixels.iter_mut() {
        *p /= max;
        if config.log_scale {
            *p = if *p > 0.0 { (1.0 + p.log10() / config.log_decades).max(0.0) } else { 0.0 };
        }
    }
    Ok(FrogTrace { size, pixels, delay_span: 2.0 * config.delay_half_span, freq_span: 2.0 * config.freq_half_span })
}

/// Write an 8-bit grayscale PNG with `byte = round(255 v)`.
pub fn render_png(trace: &FrogTrace, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), trace.size as u32, trace.size as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer.write_image_data(&trace.to_u8()).map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

/// Read back an 8-bit grayscale PNG as (width, height, bytes).
pub fn read_png(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png("expected 8-bit grayscale".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}
