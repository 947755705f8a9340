//! Saturated-absorption discriminator and the slow outer loop that steers the
//! cavity mode (or, without a cavity, the laser) onto the atomic line.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{make_pid, unity_gain_frequency, PidConfig, TransferFunction};
use crate::pdh::CavityModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SasLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Detuning from the lock transition.
    pub center_hz: f64,
    pub fwhm_hz: f64,
    /// Fractional reduction of the absorption at line center.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SasConfig {
    /// Doppler background width (Gaussian sigma), centered at zero detuning.
    pub doppler_sigma_hz: f64,
    /// Peak absorption of the Doppler background.
    pub background_depth: f64,
    #[serde(default)]
    pub lines: Vec<SasLine>,
    pub mod_freq_hz: f64,
    /// Peak frequency excursion of the modulation.
    pub mod_depth_hz: f64,
    pub demod_phase_rad: f64,
    pub lockin_bandwidth_hz: f64,
    /// Demodulated volts per unit transmission.
    pub lockin_gain_v: f64,
    #[serde(default)]
    pub lock_line_index: usize,
}

impl SasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.doppler_sigma_hz > 0.0) {
            return Err(Error::config("Doppler width must be positive"));
        }
        if !(self.background_depth > 0.0) {
            return Err(Error::config("background absorption must be positive"));
        }
        for line in &self.lines {
            if !(line.fwhm_hz > 0.0 && line.depth > 0.0) {
                return Err(Error::config(format!(
                    "SAS line at {} Hz needs positive width and depth",
                    line.center_hz
                )));
            }
        }
        let total: f64 = self.lines.iter().map(|l| l.depth).sum();
        if total >= self.background_depth {
            return Err(Error::config(format!(
                "summed line depths {total} must stay below the background absorption {}",
                self.background_depth
            )));
        }
        if self.lock_line_index >= self.lines.len() {
            return Err(Error::config(format!(
                "lock line index {} but only {} lines defined",
                self.lock_line_index,
                self.lines.len()
            )));
        }
        if !(self.mod_depth_hz > 0.0) {
            return Err(Error::config("SAS modulation depth must be positive"));
        }
        if !(self.lockin_bandwidth_hz > 0.0 && self.lockin_bandwidth_hz < self.mod_freq_hz / 10.0) {
            return Err(Error::config(
                "lock-in bandwidth must be positive and well below the modulation frequency",
            ));
        }
        Ok(())
    }

    pub fn lock_line(&self) -> Option<&SasLine> {
        self.lines.get(self.lock_line_index)
    }

    /// Lock-in output filter.
    pub fn lockin(&self) -> TransferFunction {
        TransferFunction::low_pass(self.lockin_bandwidth_hz)
    }
}

/// Probe transmission: `exp(-G(d) (background - sum depth_i L_i(d)))` with a
/// Gaussian Doppler profile `G` and Lorentzian sub-Doppler features `L_i`.
pub fn sas_transmission(cfg: &SasConfig, detuning: f64) -> f64 {
    let g = (-0.5 * (detuning / cfg.doppler_sigma_hz).powi(2)).exp();
    let lines: f64 = cfg
        .lines
        .iter()
        .map(|l| {
            let x = 2.0 * (detuning - l.center_hz) / l.fwhm_hz;
            l.depth / (1.0 + x * x)
        })
        .sum();
    (-g * (cfg.background_depth - lines)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SasError {
    pub volts: f64,
    /// Modulation at least as wide as the lock line; the lineshape is distorted.
    pub distorted: bool,
}

const MOD_SAMPLES: usize = 64;

/// First-harmonic lock-in output: the transmission under frequency modulation
/// `detuning + m sin(theta)` projected on `2 sin(theta + demod_phase)`.
pub fn sas_error(cfg: &SasConfig, detuning: f64) -> SasError {
    let m = cfg.mod_depth_hz;
    let sum: f64 = (0..MOD_SAMPLES)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / MOD_SAMPLES as f64;
            sas_transmission(cfg, detuning + m * theta.sin()) * 2.0 * (theta + cfg.demod_phase_rad).sin()
        })
        .sum();
    let distorted = cfg.lock_line().map(|l| m >= l.fwhm_hz).unwrap_or(false);
    SasError {
        volts: cfg.lockin_gain_v * sum / MOD_SAMPLES as f64,
        distorted,
    }
}

/// Error slope at the lock-line center, V/Hz.
pub fn sas_slope(cfg: &SasConfig) -> Result<f64> {
    let line = cfg.lock_line().ok_or_else(|| Error::config("no lock line defined"))?;
    let h = line.fwhm_hz * 1e-3;
    let s = (sas_error(cfg, line.center_hz + h).volts - sas_error(cfg, line.center_hz - h).volts) / (2.0 * h);
    if s == 0.0 {
        return Err(Error::ZeroSlope("SAS error has no slope at the lock line".into()));
    }
    Ok(s)
}

/// Zero crossing of the error signal nearest the lock line, by secant iteration.
pub fn sas_lock_point(cfg: &SasConfig) -> Result<f64> {
    let line = cfg.lock_line().ok_or_else(|| Error::config("no lock line defined"))?;
    let slope = sas_slope(cfg)?;
    let mut x = line.center_hz;
    for _ in 0..20 {
        let e = sas_error(cfg, x).volts;
        let step = e / slope;
        x -= step;
        if step.abs() < 1e-6 {
            break;
        }
    }
    Ok(x)
}

/// Outer loop acting on the cavity PZT: slope x lock-in x PID2 x PZT.
/// Refuses when its unity-gain frequency exceeds a tenth of `inner_ugf_hz`.
pub fn outer_loop_open_tf(
    cfg: &SasConfig,
    cavity: &CavityModel,
    pid2: &PidConfig,
    inner_ugf_hz: f64,
) -> Result<TransferFunction> {
    let g = sas_chain(cfg, pid2)?.series(&cavity.pzt());
    check_separation(&g, inner_ugf_hz)?;
    Ok(g)
}

/// SAS lock applied straight to the laser's slow actuator, with no cavity.
pub fn sas_only_open_tf(
    cfg: &SasConfig,
    pid2: &PidConfig,
    slow_actuator: &TransferFunction,
) -> Result<TransferFunction> {
    Ok(sas_chain(cfg, pid2)?.series(slow_actuator))
}

fn sas_chain(cfg: &SasConfig, pid2: &PidConfig) -> Result<TransferFunction> {
    let slope = sas_slope(cfg)?;
    Ok(make_pid(pid2)?.series(&cfg.lockin()).scaled(slope))
}

fn check_separation(g: &TransferFunction, inner_ugf_hz: f64) -> Result<()> {
    if let Some(ugf) = unity_gain_frequency(g, 1e-3, inner_ugf_hz.max(1.0) * 10.0) {
        if ugf > inner_ugf_hz / 10.0 {
            return Err(Error::LoopSeparation(format!(
                "outer unity gain at {ugf:.3e} Hz exceeds a tenth of the inner unity gain {inner_ugf_hz:.3e} Hz"
            )));
        }
    }
    Ok(())
}
