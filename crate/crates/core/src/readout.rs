//! Readout noise of a Rydberg-EIT receiver driven by a noisy probe laser.
//!
//! The probe's frequency deviation is pushed through the static transmission
//! surface sample by sample; readout frequencies sit far below the EIT
//! bandwidth so the atoms follow adiabatically.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cascade::LockConfig;
use crate::error::{Error, Result};
use crate::noise::{Psd, PsdModel};
use crate::series::{TimeSeries, Unit};
use crate::spectral::{decimate, log_bands, welch_with_averages, SpectrumKind, SpectrumSeries};

/// Probe/coupling wavelength ratio of the Cs 852 nm + 510 nm ladder.
pub const CS_LADDER_WAVELENGTH_RATIO: f64 = 852.3 / 509.6;

/// Weak-probe ladder system. Rates are in Hz (not angular).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EitModel {
    pub probe_rabi_hz: f64,
    pub coupling_rabi_hz: f64,
    /// Intermediate-state decay rate.
    pub gamma_e_hz: f64,
    /// Rydberg-state dephasing rate.
    pub gamma_r_hz: f64,
    pub optical_depth: f64,
    /// Gaussian velocity width in probe-frequency units; absent means no
    /// Doppler averaging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doppler_sigma_hz: Option<f64>,
    #[serde(default = "default_ratio")]
    pub wavelength_ratio: f64,
    /// Transmission noise floor, 1/Hz.
    pub intensity_noise: PsdModel,
}

fn default_ratio() -> f64 {
    CS_LADDER_WAVELENGTH_RATIO
}

impl EitModel {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("gamma_e_hz", self.gamma_e_hz),
            ("gamma_r_hz", self.gamma_r_hz),
            ("optical_depth", self.optical_depth),
            ("wavelength_ratio", self.wavelength_ratio),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("eit.{name} must be positive, got {v}")));
            }
        }
        if !(self.coupling_rabi_hz >= 0.0 && self.probe_rabi_hz >= 0.0) {
            return Err(Error::config("eit Rabi frequencies must be non-negative"));
        }
        if self.probe_rabi_hz >= self.gamma_e_hz {
            return Err(Error::config(format!(
                "probe Rabi frequency {} Hz is not weak compared with gamma_e {} Hz",
                self.probe_rabi_hz, self.gamma_e_hz
            )));
        }
        if let Some(s) = self.doppler_sigma_hz {
            if !(s > 0.0) {
                return Err(Error::config("eit.doppler_sigma_hz must be positive when given"));
            }
        }
        self.intensity_noise.validate()
    }

    /// Optical depth reduced by probe saturation of the two-level transition.
    fn effective_od(&self) -> f64 {
        let s = 2.0 * (self.probe_rabi_hz / self.gamma_e_hz).powi(2);
        self.optical_depth / (1.0 + s)
    }

    fn transmission_at_rest(&self, dp: f64, dc: f64) -> f64 {
        let g21 = Complex64::new(self.gamma_e_hz / 2.0, 0.0);
        let g31 = Complex64::new(self.gamma_r_hz / 2.0, 0.0);
        let i = Complex64::i();
        let coupling = self.coupling_rabi_hz * self.coupling_rabi_hz / 4.0;
        let den = g21 - i * dp + coupling / (g31 - i * (dp + dc));
        (-self.effective_od() * (g21 / den).re).exp()
    }
}

/// Probe transmission at the given probe and coupling detunings.
pub fn eit_transmission(model: &EitModel, probe_detuning: f64, coupling_detuning: f64) -> f64 {
    let Some(sigma) = model.doppler_sigma_hz else {
        return model.transmission_at_rest(probe_detuning, coupling_detuning);
    };
    // counter-propagating beams: a probe Doppler shift d moves the coupling by -d * ratio
    let (nodes, weights) = gauss_hermite_64();
    let mut absorb = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        let d = std::f64::consts::SQRT_2 * sigma * x;
        let t = model.transmission_at_rest(probe_detuning - d, coupling_detuning + d * model.wavelength_ratio);
        absorb += w * -t.ln();
    }
    (-absorb / std::f64::consts::PI.sqrt()).exp()
}

/// Nodes and weights for 64-point Gauss-Hermite quadrature (weight e^{-x^2}).
fn gauss_hermite_64() -> (Vec<f64>, Vec<f64>) {
    const N: usize = 64;
    let mut nodes = vec![0.0; N];
    let mut weights = vec![0.0; N];
    // Newton iteration on the orthonormal recurrence
    let m = N.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * N as f64 + 1.0).sqrt() - 1.85575 * (2.0 * N as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (N as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=N {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
            }
            pp = (2.0 * N as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-14 {
                break;
            }
        }
        nodes[i] = z;
        nodes[N - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[N - 1 - i] = weights[i];
    }
    (nodes, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    Resonant,
    Detuned,
}

impl OperatingMode {
    pub fn name(&self) -> &'static str {
        match self {
            OperatingMode::Resonant => "resonant",
            OperatingMode::Detuned => "detuned",
        }
    }
}

impl fmt::Display for OperatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub probe_detuning: f64,
    pub coupling_detuning: f64,
    pub mode: OperatingMode,
}

impl OperatingPoint {
    pub fn resonant() -> Self {
        Self {
            probe_detuning: 0.0,
            coupling_detuning: 0.0,
            mode: OperatingMode::Resonant,
        }
    }

    pub fn detuned(coupling_detuning: f64) -> Result<Self> {
        if coupling_detuning == 0.0 || !coupling_detuning.is_finite() {
            return Err(Error::arg(
                "a detuned operating point needs a finite non-zero coupling detuning",
            ));
        }
        Ok(Self {
            probe_detuning: 0.0,
            coupling_detuning,
            mode: OperatingMode::Detuned,
        })
    }
}

/// `[eit]` configuration section: the model plus its two operating points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EitConfig {
    pub probe_rabi_hz: f64,
    pub coupling_rabi_hz: f64,
    pub gamma_e_hz: f64,
    pub gamma_r_hz: f64,
    pub optical_depth: f64,
    #[serde(default)]
    pub doppler: bool,
    #[serde(default)]
    pub doppler_sigma_hz: f64,
    #[serde(default = "default_ratio")]
    pub wavelength_ratio: f64,
    pub intensity_noise: PsdModel,
    #[serde(default = "default_detuned")]
    pub detuned_coupling_hz: f64,
}

fn default_detuned() -> f64 {
    2.4e6
}

impl EitConfig {
    pub fn model(&self) -> EitModel {
        EitModel {
            probe_rabi_hz: self.probe_rabi_hz,
            coupling_rabi_hz: self.coupling_rabi_hz,
            gamma_e_hz: self.gamma_e_hz,
            gamma_r_hz: self.gamma_r_hz,
            optical_depth: self.optical_depth,
            doppler_sigma_hz: self.doppler.then_some(self.doppler_sigma_hz),
            wavelength_ratio: self.wavelength_ratio,
            intensity_noise: self.intensity_noise.clone(),
        }
    }

    pub fn operating_points(&self) -> Result<[OperatingPoint; 2]> {
        Ok([
            OperatingPoint::resonant(),
            OperatingPoint::detuned(self.detuned_coupling_hz)?,
        ])
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.operating_points().map(|_| ())
    }
}

/// dT/d(probe detuning) by central difference. `step` defaults to gamma_e/1000.
pub fn transmission_slope(model: &EitModel, op: &OperatingPoint, step: Option<f64>) -> Result<f64> {
    let h = step.unwrap_or(model.gamma_e_hz / 1000.0);
    let scale = model.gamma_e_hz.max(op.probe_detuning.abs());
    if !(h > 0.0) || h < f64::EPSILON.sqrt() * scale {
        return Err(Error::arg(format!(
            "finite-difference step {h} Hz is below numeric precision"
        )));
    }
    let t = |d: f64| eit_transmission(model, op.probe_detuning + d, op.coupling_detuning);
    Ok((t(h) - t(-h)) / (2.0 * h))
}

/// Second derivative of the transmission in probe detuning.
pub fn transmission_curvature(model: &EitModel, op: &OperatingPoint) -> f64 {
    let h = model.gamma_e_hz / 200.0;
    let t = |d: f64| eit_transmission(model, op.probe_detuning + d, op.coupling_detuning);
    (t(h) - 2.0 * t(0.0) + t(-h)) / (h * h)
}

#[derive(Debug, Clone)]
pub struct ReadoutSeries {
    pub transmission: TimeSeries,
    /// Samples whose excursion went past 10 gamma_e and were clipped there.
    pub clipped: usize,
}

/// Transmission seen by a probe whose frequency wanders by `freq_noise`.
pub fn simulate_readout(freq_noise: &TimeSeries, model: &EitModel, op: &OperatingPoint) -> Result<ReadoutSeries> {
    if freq_noise.unit() != Unit::HzDeviation {
        return Err(Error::arg("readout needs a frequency-deviation series"));
    }
    let limit = 10.0 * model.gamma_e_hz;
    let mut clipped = 0;
    let out = freq_noise
        .samples()
        .iter()
        .map(|&dv| {
            let mut d = dv;
            if d.abs() > limit {
                clipped += 1;
                d = d.clamp(-limit, limit);
            }
            eit_transmission(model, op.probe_detuning + d, op.coupling_detuning)
        })
        .collect();
    Ok(ReadoutSeries {
        transmission: TimeSeries::new(freq_noise.sample_rate(), out, Unit::Transmission)?,
        clipped,
    })
}

/// Laser frequency noise as a parametric model or a measured spectrum.
pub enum LaserSpectrum<'a> {
    Model(&'a PsdModel),
    Spectrum(&'a SpectrumSeries),
    Other(&'a dyn Psd),
}

impl LaserSpectrum<'_> {
    fn psd(&self) -> &dyn Psd {
        match self {
            LaserSpectrum::Model(m) => *m,
            LaserSpectrum::Spectrum(s) => *s,
            LaserSpectrum::Other(p) => *p,
        }
    }

    fn covers(&self, lo: f64, hi: f64) -> bool {
        match self {
            LaserSpectrum::Spectrum(s) => s.covers(lo, hi),
            _ => true,
        }
    }
}

/// Grid and integration limits for [`readout_noise_psd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutGrid {
    pub f_lo: f64,
    pub f_hi: f64,
    pub points: usize,
    /// Lowest frequency kept in the second-order convolution (1 / observation time).
    pub f_min: f64,
    /// Highest laser-noise frequency kept in the convolution.
    pub f_max: f64,
}

impl Default for ReadoutGrid {
    fn default() -> Self {
        Self {
            f_lo: 1e4,
            f_hi: 1e5,
            points: 200,
            f_min: 10.0,
            f_max: 2e6,
        }
    }
}

/// Readout (transmission) PSD to second order in the frequency deviation,
/// assuming Gaussian laser noise:
/// `S_T(f) = T'^2 S(f) + (T''/2)^2 * int S(|v|) S(|f - v|) dv + floor`.
pub fn readout_noise_psd(
    laser: &LaserSpectrum<'_>,
    model: &EitModel,
    op: &OperatingPoint,
    grid: &ReadoutGrid,
) -> Result<SpectrumSeries> {
    if !(grid.f_lo > 0.0 && grid.f_hi > grid.f_lo && grid.points >= 2) {
        return Err(Error::arg("readout grid needs 0 < f_lo < f_hi and at least two points"));
    }
    if !laser.covers(grid.f_lo, grid.f_hi) {
        return Err(Error::arg(format!(
            "laser spectrum does not cover the readout band {}-{} Hz",
            grid.f_lo, grid.f_hi
        )));
    }
    let psd = laser.psd();
    let a = transmission_slope(model, op, None)?;
    let b = 0.5 * transmission_curvature(model, op);
    let second = self_convolution(psd, grid)?;
    let floor = &model.intensity_noise;
    let base = SpectrumSeries::from_psd(&crate::noise::FnPsd(|_| 1.0), grid.f_lo, grid.f_hi, grid.points)?;
    let freqs = base.frequencies().to_vec();
    let values = freqs
        .iter()
        .map(|&f| a * a * psd.density(f) + b * b * second(f) + floor.density(f))
        .collect();
    SpectrumSeries::new(freqs, values, SpectrumKind::Psd, 1)
}

/// `f -> int_{-inf}^{inf} S(|v|) S(|f - v|) dv`, with S cut below `f_min` and
/// above `f_max`, evaluated by FFT on a uniform grid.
fn self_convolution<'a>(psd: &dyn Psd, grid: &ReadoutGrid) -> Result<impl Fn(f64) -> f64 + 'a> {
    if !(grid.f_min > 0.0 && grid.f_max > grid.f_hi) {
        return Err(Error::arg("convolution limits need 0 < f_min and f_max above the band"));
    }
    let df = grid.f_min;
    let half = (grid.f_max / df).ceil() as usize;
    let n = (4 * half).next_power_of_two();
    // two-sided array indexed by signed frequency k * df
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=half {
        let s = psd.density(k as f64 * df);
        buf[k] = Complex64::new(s, 0.0);
        buf[n - k] = Complex64::new(s, 0.0);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for v in buf.iter_mut() {
        *v = *v * *v;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let conv: Vec<f64> = buf[..=2 * half].iter().map(|c| c.re * df / n as f64).collect();
    Ok(move |f: f64| {
        let x = f / df;
        let i = x.floor() as usize;
        if i + 1 >= conv.len() {
            return 0.0;
        }
        let t = x - i as f64;
        conv[i] * (1.0 - t) + conv[i + 1] * t
    })
}

/// Analysis settings for the six-curve comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutOptions {
    pub band: (f64, f64),
    pub bands_per_decade: usize,
    pub min_averages: usize,
}

impl Default for ReadoutOptions {
    fn default() -> Self {
        Self {
            band: (1e4, 1e5),
            bands_per_decade: 20,
            min_averages: 50,
        }
    }
}

/// Readout noise in dB above the common floor, band-averaged on a shared log grid.
#[derive(Debug, Clone)]
pub struct ReadoutTable {
    /// Band centers (geometric).
    pub frequencies: Vec<f64>,
    pub curves: BTreeMap<(LockConfig, OperatingMode), Vec<f64>>,
    pub clipped: BTreeMap<(LockConfig, OperatingMode), usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingSummary {
    /// Largest |cascade - ule_reference| over the band, dB.
    pub cascade_ule_max_gap_db: f64,
    pub sas_cascade_max_gap_db: f64,
    pub sas_cascade_min_gap_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutSummary {
    pub resonant: OperatingSummary,
    pub detuned: OperatingSummary,
}

impl ReadoutTable {
    pub fn curve(&self, lock: LockConfig, mode: OperatingMode) -> Result<&[f64]> {
        self.curves
            .get(&(lock, mode))
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::arg(format!("no readout curve for {lock} at the {mode} point")))
    }

    pub fn summary(&self) -> Result<ReadoutSummary> {
        let one = |mode| -> Result<OperatingSummary> {
            let c = self.curve(LockConfig::Cascade, mode)?;
            let u = self.curve(LockConfig::UleReference, mode)?;
            let s = self.curve(LockConfig::SasOnly, mode)?;
            let cu = c.iter().zip(u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let sc: Vec<f64> = s.iter().zip(c).map(|(a, b)| a - b).collect();
            Ok(OperatingSummary {
                cascade_ule_max_gap_db: cu,
                sas_cascade_max_gap_db: sc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                sas_cascade_min_gap_db: sc.iter().copied().fold(f64::INFINITY, f64::min),
            })
        };
        Ok(ReadoutSummary {
            resonant: one(OperatingMode::Resonant)?,
            detuned: one(OperatingMode::Detuned)?,
        })
    }
}

impl fmt::Display for ReadoutSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, s) in [("resonant", self.resonant), ("detuned", self.detuned)] {
            writeln!(f, "{name}.cascade_ule_max_gap_db = {:.2}", s.cascade_ule_max_gap_db)?;
            writeln!(f, "{name}.sas_cascade_max_gap_db = {:.2}", s.sas_cascade_max_gap_db)?;
            writeln!(f, "{name}.sas_cascade_min_gap_db = {:.2}", s.sas_cascade_min_gap_db)?;
        }
        Ok(())
    }
}

/// Readout spectrum of one probe-noise record at one operating point, in dB
/// above the floor, band-averaged.
pub fn readout_curve(
    freq_noise: &TimeSeries,
    model: &EitModel,
    op: &OperatingPoint,
    options: &ReadoutOptions,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let (lo, hi) = options.band;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::arg(format!("readout band {lo}:{hi} must satisfy 0 < lo < hi")));
    }
    // bring the record down to about ten times the top readout frequency
    let factor = ((freq_noise.sample_rate() / (10.0 * hi)).floor() as usize).max(1);
    let slow = decimate(freq_noise, factor)?;
    if slow.sample_rate() < 4.0 * hi {
        return Err(Error::arg(format!(
            "probe noise sampled at {} Hz cannot resolve readout up to {hi} Hz",
            slow.sample_rate()
        )));
    }
    let readout = simulate_readout(&slow, model, op)?;
    let psd = welch_with_averages(&readout.transmission, options.min_averages)?;
    let bands = log_bands(lo, hi, options.bands_per_decade);
    let mut freqs = Vec::with_capacity(bands.len());
    let mut db = Vec::with_capacity(bands.len());
    for (a, b) in bands {
        let fc = (a * b).sqrt();
        let floor = model.intensity_noise.density(fc);
        if !(floor > 0.0) {
            return Err(Error::arg("readout floor must be positive inside the band"));
        }
        let (mean, _) = psd
            .band_average(a, b)
            .ok_or_else(|| Error::arg(format!("Welch resolution too coarse for band {a:.0}-{b:.0} Hz")))?;
        freqs.push(fc);
        db.push(10.0 * ((mean + floor) / floor).log10());
    }
    Ok((freqs, db, readout.clipped))
}

/// Six curves: each probe record at both operating points.
pub fn run_fig3_comparison(
    probes: &BTreeMap<LockConfig, TimeSeries>,
    eit: &EitConfig,
    options: &ReadoutOptions,
) -> Result<ReadoutTable> {
    let model = eit.model();
    model.validate()?;
    let ops = eit.operating_points()?;
    for needed in [LockConfig::SasOnly, LockConfig::UleReference, LockConfig::Cascade] {
        if !probes.contains_key(&needed) {
            return Err(Error::arg(format!(
                "readout comparison is missing the {needed} probe record"
            )));
        }
    }
    let mut table = ReadoutTable {
        frequencies: Vec::new(),
        curves: BTreeMap::new(),
        clipped: BTreeMap::new(),
    };
    for (&lock, series) in probes {
        for op in &ops {
            let (f, db, clipped) = readout_curve(series, &model, op, options)?;
            table.frequencies = f;
            table.curves.insert((lock, op.mode), db);
            table.clipped.insert((lock, op.mode), clipped);
        }
    }
    Ok(table)
}
