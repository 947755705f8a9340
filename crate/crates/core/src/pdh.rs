//! Pound-Drever-Hall discriminator against the low-cost cavity and the inner
//! (fast) loop built around it.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{closed_loop_suppression, make_pid, PidConfig, TransferFunction};
use crate::noise::{compose, Psd, PsdModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityModel {
    /// Full width at half maximum.
    pub linewidth_hz: f64,
    pub finesse: f64,
    /// Optional; must equal `finesse * linewidth_hz` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fsr_hz: Option<f64>,
    /// Mode-frequency shift per PZT volt.
    pub pzt_gain_hz_per_v: f64,
    pub pzt_bandwidth_hz: f64,
    /// Mode-frequency noise.
    pub noise: PsdModel,
}

impl CavityModel {
    pub fn fsr(&self) -> f64 {
        self.finesse * self.linewidth_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.linewidth_hz > 0.0) {
            return Err(Error::config("cavity linewidth must be positive"));
        }
        if !(self.finesse > 1.0) {
            return Err(Error::config("cavity finesse must exceed 1"));
        }
        if let Some(fsr) = self.fsr_hz {
            if ((fsr - self.fsr()) / self.fsr()).abs() > 1e-6 {
                return Err(Error::config(format!(
                    "cavity fsr_hz {fsr} disagrees with finesse x linewidth = {}",
                    self.fsr()
                )));
            }
        }
        if !(self.pzt_gain_hz_per_v > 0.0 && self.pzt_bandwidth_hz > 0.0) {
            return Err(Error::config("cavity PZT gain and bandwidth must be positive"));
        }
        self.noise.validate()
    }

    /// Mirror amplitude reflectivity from the finesse, `F = pi sqrt(R) / (1 - R)`.
    pub fn mirror_reflectivity(&self) -> f64 {
        let f = self.finesse;
        (-PI + (PI * PI + 4.0 * f * f).sqrt()) / (2.0 * f)
    }

    /// Reflection coefficient of the cavity at detuning `delta_hz`.
    pub fn reflection(&self, delta_hz: f64) -> Complex64 {
        let r = self.mirror_reflectivity();
        let e = Complex64::from_polar(1.0, 2.0 * PI * delta_hz / self.fsr());
        r * (e - 1.0) / (1.0 - r * r * e)
    }

    /// Frequency-discrimination response: one pole at half the linewidth.
    pub fn response(&self) -> TransferFunction {
        TransferFunction::low_pass(self.linewidth_hz / 2.0)
    }

    /// Mode-frequency response to the PZT voltage.
    pub fn pzt(&self) -> TransferFunction {
        TransferFunction::low_pass(self.pzt_bandwidth_hz).scaled(self.pzt_gain_hz_per_v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdhConfig {
    pub mod_freq_hz: f64,
    /// Phase-modulation index.
    pub mod_depth_rad: f64,
    pub demod_phase_rad: f64,
    /// Normalized carrier power; defaults to `J0(beta)^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_power: Option<f64>,
    /// Normalized power in each first-order sideband; defaults to `J1(beta)^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sideband_power: Option<f64>,
    /// Demodulated volts per unit normalized power.
    pub detector_gain_v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_override_v_per_hz: Option<f64>,
    /// Amplifier floor at the error point, V^2/Hz.
    pub detector_noise: PsdModel,
    /// Laser intensity noise seen by the photodiode, V^2/Hz.
    pub intensity_noise: PsdModel,
    /// Unity-gain frequency of the deliberately loose lock used as the
    /// suppression reference.
    pub loose_lock_bandwidth_hz: f64,
}

/// Bessel function of the first kind, integer order, by its power series.
fn bessel_j(n: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half.powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = term;
    for m in 1..60 {
        term *= -half * half / (m as f64 * (m + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

impl PdhConfig {
    pub fn carrier(&self) -> f64 {
        self.carrier_power
            .unwrap_or_else(|| bessel_j(0, self.mod_depth_rad).powi(2))
    }

    pub fn sideband(&self) -> f64 {
        self.sideband_power
            .unwrap_or_else(|| bessel_j(1, self.mod_depth_rad).powi(2))
    }

    pub fn validate(&self, cavity: &CavityModel) -> Result<()> {
        if !(self.mod_freq_hz > 2.0 * cavity.linewidth_hz) {
            return Err(Error::config(format!(
                "PDH modulation {} Hz must exceed twice the cavity linewidth",
                self.mod_freq_hz
            )));
        }
        let (pc, ps) = (self.carrier(), self.sideband());
        if pc < 0.0 || ps < 0.0 || pc + 2.0 * ps > 1.0 + 1e-12 {
            return Err(Error::config(format!(
                "PDH powers need carrier + 2 x sideband <= 1, got {pc} + 2 x {ps}"
            )));
        }
        if !(self.loose_lock_bandwidth_hz > 0.0) {
            return Err(Error::config("loose-lock bandwidth must be positive"));
        }
        self.detector_noise.validate()?;
        self.intensity_noise.validate()
    }
}

/// Demodulated PDH error voltage at laser-cavity detuning `detuning` Hz.
pub fn pdh_error_curve(cfg: &PdhConfig, cavity: &CavityModel, detuning: f64) -> Result<f64> {
    let half_fsr = cavity.fsr() / 2.0;
    if detuning.abs() >= half_fsr {
        return Err(Error::Wraparound {
            detuning_hz: detuning,
            half_fsr_hz: half_fsr,
        });
    }
    let om = cfg.mod_freq_hz;
    let f0 = cavity.reflection(detuning);
    let x = f0 * cavity.reflection(detuning + om).conj() - f0.conj() * cavity.reflection(detuning - om);
    let amp = cfg.detector_gain_v * 2.0 * (cfg.carrier() * cfg.sideband()).sqrt();
    Ok(amp * (x * Complex64::from_polar(1.0, cfg.demod_phase_rad)).im)
}

/// Central slope of the error curve, V/Hz.
pub fn discriminator_slope(cfg: &PdhConfig, cavity: &CavityModel) -> Result<f64> {
    if let Some(s) = cfg.slope_override_v_per_hz {
        return Ok(s);
    }
    let (pc, ps) = (cfg.carrier(), cfg.sideband());
    if pc <= 0.0 || ps <= 0.0 {
        return Err(Error::ZeroSlope(format!("carrier power {pc}, sideband power {ps}")));
    }
    let r = cavity.mirror_reflectivity();
    // d/dDelta of F(Delta) at resonance is i r / (1 - r^2) * 2 pi / fsr
    let c0 = r / (1.0 - r * r) * 2.0 * PI / cavity.fsr();
    let d = cavity.reflection(cfg.mod_freq_hz).conj() * Complex64::new(0.0, 2.0 * c0);
    let amp = cfg.detector_gain_v * 2.0 * (pc * ps).sqrt();
    let slope = amp * (d * Complex64::from_polar(1.0, cfg.demod_phase_rad)).im;
    if slope == 0.0 {
        return Err(Error::ZeroSlope("demodulation phase nulls the error signal".into()));
    }
    Ok(slope)
}

/// Slope x PID x fast actuator x cavity response (delay lives in `fast_path`).
pub fn inner_loop_open_tf(
    cfg: &PdhConfig,
    cavity: &CavityModel,
    pid: &PidConfig,
    fast_path: &TransferFunction,
) -> Result<TransferFunction> {
    let slope = discriminator_slope(cfg, cavity)?;
    Ok(make_pid(pid)?
        .series(fast_path)
        .series(&cavity.response())
        .scaled(slope))
}

/// Integrator gain giving the loose lock its configured unity-gain frequency.
pub fn loose_lock_gain(cfg: &PdhConfig, cavity: &CavityModel, fast_path: &TransferFunction) -> Result<f64> {
    let slope = discriminator_slope(cfg, cavity)?;
    let unit = TransferFunction::integrator(1.0)
        .series(fast_path)
        .series(&cavity.response())
        .scaled(slope);
    Ok(1.0 / unit.response(cfg.loose_lock_bandwidth_hz).norm())
}

/// Open loop of the loose lock: a pure integrator in place of PID1.
pub fn loose_loop_open_tf(
    cfg: &PdhConfig,
    cavity: &CavityModel,
    fast_path: &TransferFunction,
) -> Result<TransferFunction> {
    let ki = loose_lock_gain(cfg, cavity, fast_path)?;
    let slope = discriminator_slope(cfg, cavity)?;
    Ok(TransferFunction::integrator(ki)
        .series(fast_path)
        .series(&cavity.response())
        .scaled(slope))
}

/// Which contributions the photodiode monitor sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopState {
    AmpNoiseOnly,
    IntensityNoise,
    LooseLock,
    TightLock,
}

impl LoopState {
    pub const ALL: [LoopState; 4] = [
        LoopState::AmpNoiseOnly,
        LoopState::IntensityNoise,
        LoopState::LooseLock,
        LoopState::TightLock,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LoopState::AmpNoiseOnly => "amp_noise_only",
            LoopState::IntensityNoise => "intensity_noise",
            LoopState::LooseLock => "loose_lock",
            LoopState::TightLock => "tight_lock",
        }
    }
}

impl FromStr for LoopState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LoopState::ALL
            .into_iter()
            .find(|state| state.name() == s)
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown loop state '{s}'; expected one of amp_noise_only, intensity_noise, loose_lock, tight_lock"
                ))
            })
    }
}

/// Photodiode-monitor spectrum, V^2/Hz.
#[derive(Debug, Clone)]
pub struct MonitorPsd {
    detector: PsdModel,
    intensity: Option<PsdModel>,
    residual: Option<(PsdModel, f64, TransferFunction)>,
}

impl Psd for MonitorPsd {
    fn density(&self, f_hz: f64) -> f64 {
        let mut s = self.detector.density(f_hz);
        if let Some(i) = &self.intensity {
            s += i.density(f_hz);
        }
        if let Some((free, slope, g)) = &self.residual {
            let supp = closed_loop_suppression(g, f_hz).unwrap_or(f64::INFINITY);
            s += slope * slope * free.density(f_hz) * supp * supp;
        }
        s
    }
}

/// Monitor-port spectrum for a loop state: amplifier floor, then intensity
/// noise, then the laser-cavity frequency noise seen through the
/// discriminator with the loose or tight loop's suppression applied.
pub fn pd_monitor_psd(
    cfg: &PdhConfig,
    cavity: &CavityModel,
    laser_noise: &PsdModel,
    pid: &PidConfig,
    fast_path: &TransferFunction,
    state: LoopState,
) -> Result<MonitorPsd> {
    let detector = cfg.detector_noise.clone();
    let intensity = (state != LoopState::AmpNoiseOnly).then(|| cfg.intensity_noise.clone());
    let residual = match state {
        LoopState::AmpNoiseOnly | LoopState::IntensityNoise => None,
        LoopState::LooseLock | LoopState::TightLock => {
            let free = compose(&[laser_noise.clone(), cavity.noise.clone()])?;
            let slope = discriminator_slope(cfg, cavity)?;
            let g = if state == LoopState::TightLock {
                inner_loop_open_tf(cfg, cavity, pid, fast_path)?
            } else {
                loose_loop_open_tf(cfg, cavity, fast_path)?
            };
            Some((free, slope, g))
        }
    };
    Ok(MonitorPsd {
        detector,
        intensity,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cavity(linewidth: f64) -> CavityModel {
        CavityModel {
            linewidth_hz: linewidth,
            finesse: 1500.0,
            fsr_hz: None,
            pzt_gain_hz_per_v: 1e7,
            pzt_bandwidth_hz: 2e3,
            noise: PsdModel::white(1.0),
        }
    }

    fn pdh() -> PdhConfig {
        PdhConfig {
            mod_freq_hz: 7e6,
            mod_depth_rad: 1.08,
            demod_phase_rad: PI,
            carrier_power: None,
            sideband_power: None,
            detector_gain_v: 0.4,
            slope_override_v_per_hz: None,
            detector_noise: PsdModel::white(1e-15),
            intensity_noise: PsdModel::white(3e-15),
            loose_lock_bandwidth_hz: 200.0,
        }
    }

    #[test]
    fn bessel_values() {
        // tabulated J0(1) = 0.7651976866, J1(1) = 0.4400505857
        assert!((bessel_j(0, 1.0) - 0.765_197_686_6).abs() < 1e-9);
        assert!((bessel_j(1, 1.0) - 0.440_050_585_7).abs() < 1e-9);
    }

    #[test]
    fn finesse_round_trip() {
        let c = cavity(1e6);
        let r = c.mirror_reflectivity();
        let big_r = r * r;
        assert!((PI * big_r.sqrt() / (1.0 - big_r) - 1500.0).abs() < 1e-6);
        // reflection dips to zero on resonance (impedance matched)
        assert!(c.reflection(0.0).norm() < 1e-15);
    }

    #[test]
    fn error_zero_at_resonance_and_odd() {
        let (cfg, c) = (pdh(), cavity(1e6));
        assert!(pdh_error_curve(&cfg, &c, 0.0).unwrap().abs() < 1e-15);
        let peak = (0..400)
            .map(|i| pdh_error_curve(&cfg, &c, i as f64 * 5e4).unwrap().abs())
            .fold(0.0, f64::max);
        for i in 1..400 {
            let d = i as f64 * 5e4;
            let sum = pdh_error_curve(&cfg, &c, d).unwrap() + pdh_error_curve(&cfg, &c, -d).unwrap();
            assert!(sum.abs() < 1e-9 * peak);
        }
    }

    #[test]
    fn crossings_next_to_the_sidebands() {
        let (cfg, c) = (pdh(), cavity(1e6));
        for sign in [1.0, -1.0] {
            let a = pdh_error_curve(&cfg, &c, sign * 6.9e6).unwrap();
            let b = pdh_error_curve(&cfg, &c, sign * 7.1e6).unwrap();
            assert!(a * b < 0.0, "no sign change around {} MHz", sign * 7.0);
        }
    }

    #[test]
    fn wraparound_rejected() {
        let (cfg, c) = (pdh(), cavity(1e6));
        assert!(matches!(
            pdh_error_curve(&cfg, &c, 0.75e9),
            Err(Error::Wraparound { .. })
        ));
    }

    #[test]
    fn demod_phase_flip_negates() {
        let (cfg, c) = (pdh(), cavity(1e6));
        let mut flipped = cfg.clone();
        flipped.demod_phase_rad += PI;
        for d in [-3e6, -2e5, 1e4, 4e5, 7.5e6] {
            let a = pdh_error_curve(&cfg, &c, d).unwrap();
            let b = pdh_error_curve(&flipped, &c, d).unwrap();
            assert!((a + b).abs() < 1e-12 * a.abs().max(1e-30));
        }
        let s = discriminator_slope(&cfg, &c).unwrap();
        let t = discriminator_slope(&flipped, &c).unwrap();
        assert!((s + t).abs() < 1e-12 * s.abs());
    }

    #[test]
    fn slope_matches_finite_difference() {
        let (cfg, c) = (pdh(), cavity(1e6));
        let h = 10.0;
        let fd = (pdh_error_curve(&cfg, &c, h).unwrap() - pdh_error_curve(&cfg, &c, -h).unwrap()) / (2.0 * h);
        let s = discriminator_slope(&cfg, &c).unwrap();
        assert!((s / fd - 1.0).abs() < 1e-3);
        assert!(s > 0.0);
    }

    #[test]
    fn halving_linewidth_doubles_slope() {
        let cfg = pdh();
        let fd = |c: &CavityModel| {
            let h = 10.0;
            (pdh_error_curve(&cfg, c, h).unwrap() - pdh_error_curve(&cfg, c, -h).unwrap()) / (2.0 * h)
        };
        let ratio = fd(&cavity(0.5e6)) / fd(&cavity(1e6));
        assert!((ratio - 2.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn override_and_zero_power() {
        let c = cavity(1e6);
        let mut cfg = pdh();
        cfg.slope_override_v_per_hz = Some(1e-6);
        assert_eq!(discriminator_slope(&cfg, &c).unwrap(), 1e-6);
        let mut cfg = pdh();
        cfg.carrier_power = Some(0.0);
        assert!(matches!(discriminator_slope(&cfg, &c), Err(Error::ZeroSlope(_))));
    }

    #[test]
    fn linear_model_holds_near_lock() {
        let (cfg, c) = (pdh(), cavity(1e6));
        let s = discriminator_slope(&cfg, &c).unwrap();
        for d in [1e3, 1e4, 4.9e4] {
            let e = pdh_error_curve(&cfg, &c, d).unwrap();
            assert!((e / (s * d) - 1.0).abs() < 0.01, "{d}");
        }
    }

    #[test]
    fn unknown_state_rejected() {
        assert!("tight_lock".parse::<LoopState>().is_ok());
        assert!("loosest".parse::<LoopState>().is_err());
    }
}
