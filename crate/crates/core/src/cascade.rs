//! Two-loop cascade: closed-form residual spectra and the multi-rate
//! time-domain simulation.
//!
//! Sign conventions: both discriminators have positive slope and both
//! actuators push against the error, so every loop closes as `1 / (1 + G)`.
//! The PDH error senses laser minus cavity mode through the cavity's
//! half-linewidth pole; the SAS error senses the laser's absolute frequency.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{
    discretize, make_pid, unity_gain_frequency, ActuatorConfig, DigitalFilter, PidConfig, PidController,
    TransferFunction,
};
use crate::noise::{derive_seed, NoiseStream, Psd, PsdModel, SynthConfig};
use crate::pdh::{
    discriminator_slope, inner_loop_open_tf, loose_lock_gain, loose_loop_open_tf, CavityModel, PdhConfig,
};
use crate::sas::{outer_loop_open_tf, sas_only_open_tf, sas_slope, SasConfig};
use crate::series::{TimeSeries, Unit};
use crate::spectral::{average_spectra, beat_spectrum, Decimator, SpectrumSeries};

/// Which loops run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockConfig {
    FreeRun,
    SasOnly,
    LcOnly,
    Cascade,
    UleReference,
}

impl LockConfig {
    pub const ALL: [LockConfig; 5] = [
        LockConfig::FreeRun,
        LockConfig::SasOnly,
        LockConfig::LcOnly,
        LockConfig::Cascade,
        LockConfig::UleReference,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LockConfig::FreeRun => "free_run",
            LockConfig::SasOnly => "sas_only",
            LockConfig::LcOnly => "lc_only",
            LockConfig::Cascade => "cascade",
            LockConfig::UleReference => "ule_reference",
        }
    }

    fn inner_active(&self) -> bool {
        matches!(self, LockConfig::LcOnly | LockConfig::Cascade)
    }
}

impl fmt::Display for LockConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LockConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LockConfig::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let valid: Vec<_> = LockConfig::ALL.iter().map(|c| c.name()).collect();
            Error::arg(format!(
                "unknown lock configuration '{s}'; valid values: {}",
                valid.join(", ")
            ))
        })
    }
}

/// Inner-loop controller choice: the configured PID1, or the loose
/// integrator used as the suppression reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerLock {
    #[default]
    Tight,
    Loose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub fast_hz: f64,
    pub slow_hz: f64,
    /// Recorded series keep every n-th fast sample after anti-alias filtering.
    #[serde(default = "default_decimation")]
    pub record_decimation: usize,
}

fn default_decimation() -> usize {
    8
}

impl Rates {
    pub fn slow_ratio(&self) -> usize {
        (self.fast_hz / self.slow_hz).round() as usize
    }

    pub fn record_hz(&self) -> f64 {
        self.fast_hz / self.record_decimation as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub duration_s: f64,
    /// Start-up transient dropped from analyses (kept in the raw series).
    pub settle_s: f64,
    /// Outer loop stays open until this time.
    pub outer_engage_s: f64,
}

/// Everything needed to run one locking configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub laser_noise: PsdModel,
    pub cavity: CavityModel,
    pub pdh: PdhConfig,
    pub sas: SasConfig,
    pub pid1: PidConfig,
    pub pid2: PidConfig,
    pub fast_actuator: ActuatorConfig,
    pub slow_actuator: ActuatorConfig,
    /// Frequency noise of the reference-grade laser.
    pub ule_noise: PsdModel,
    pub rates: Rates,
    pub timing: Timing,
    pub seed: u64,
    pub lock_config: LockConfig,
    pub inner_lock: InnerLock,
}

/// Noise stream identifiers; shared across lock configurations so that
/// comparisons see the same realizations.
const STREAM_LASER: u64 = 1;
const STREAM_CAVITY: u64 = 2;
const STREAM_DETECTOR: u64 = 3;
const STREAM_ULE: u64 = 4;

impl Scenario {
    pub fn with_lock(&self, lock: LockConfig) -> Scenario {
        Scenario {
            lock_config: lock,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.laser_noise.validate()?;
        self.ule_noise.validate()?;
        self.cavity.validate()?;
        self.pdh.validate(&self.cavity)?;
        self.sas.validate()?;
        self.pid1.validate()?;
        self.pid2.validate()?;
        self.fast_actuator.validate()?;
        self.slow_actuator.validate()?;
        let r = &self.rates;
        if !(r.fast_hz > 0.0 && r.slow_hz > 0.0 && r.slow_hz <= r.fast_hz) {
            return Err(Error::config("rates need 0 < slow_hz <= fast_hz"));
        }
        if (r.fast_hz / r.slow_hz - r.slow_ratio() as f64).abs() > 1e-9 {
            return Err(Error::config(format!(
                "slow rate {} Hz must divide the fast rate {} Hz",
                r.slow_hz, r.fast_hz
            )));
        }
        if r.record_decimation == 0 {
            return Err(Error::config("record_decimation must be at least 1"));
        }
        let t = &self.timing;
        if !(t.duration_s > 0.0 && t.settle_s >= 0.0 && t.settle_s < t.duration_s && t.outer_engage_s >= 0.0) {
            return Err(Error::config(
                "timing needs duration_s > settle_s >= 0 and outer_engage_s >= 0",
            ));
        }
        let ugf = self.inner_ugf()?;
        if r.fast_hz < 4.0 * ugf {
            return Err(Error::config(format!(
                "fast rate {} Hz is below four times the inner unity-gain frequency {ugf:.3e} Hz",
                r.fast_hz
            )));
        }
        outer_loop_open_tf(&self.sas, &self.cavity, &self.pid2, ugf)?;
        Ok(())
    }

    pub fn pdh_slope(&self) -> Result<f64> {
        discriminator_slope(&self.pdh, &self.cavity)
    }

    pub fn fast_path(&self) -> TransferFunction {
        self.fast_actuator.transfer_function()
    }

    /// Inner open loop for the selected inner controller.
    pub fn inner_open_loop(&self) -> Result<TransferFunction> {
        match self.inner_lock {
            InnerLock::Tight => inner_loop_open_tf(&self.pdh, &self.cavity, &self.pid1, &self.fast_path()),
            InnerLock::Loose => loose_loop_open_tf(&self.pdh, &self.cavity, &self.fast_path()),
        }
    }

    pub fn inner_ugf(&self) -> Result<f64> {
        let g = inner_loop_open_tf(&self.pdh, &self.cavity, &self.pid1, &self.fast_path())?;
        unity_gain_frequency(&g, 1.0, self.rates.fast_hz)
            .ok_or_else(|| Error::config("inner loop has no unity-gain crossing below the fast rate"))
    }

    pub fn outer_open_loop(&self) -> Result<TransferFunction> {
        outer_loop_open_tf(&self.sas, &self.cavity, &self.pid2, self.inner_ugf()?)
    }

    pub fn sas_only_open_loop(&self) -> Result<TransferFunction> {
        sas_only_open_tf(&self.sas, &self.pid2, &self.slow_actuator.transfer_function())
    }

    /// Number of fast-rate steps.
    pub fn fast_steps(&self) -> usize {
        let ratio = self.rates.slow_ratio();
        let n = (self.timing.duration_s * self.rates.fast_hz).round() as usize;
        n.div_ceil(ratio) * ratio
    }
}

/// Recorded quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Laser frequency relative to the atomic line.
    Absolute,
    /// Laser minus cavity mode.
    Relative,
    /// Cavity-mode frequency relative to the atomic line.
    Cavity,
    /// PDH error signal divided by the discriminator slope (in-loop estimate
    /// of the relative noise, detector noise included).
    Error,
}

/// Closed-form channel spectra from the loop algebra.
pub struct AnalyticModel {
    lock: LockConfig,
    laser: PsdModel,
    cavity_noise: PsdModel,
    ule: PsdModel,
    detector: PsdModel,
    slope: f64,
    g1: Option<TransferFunction>,
    k: Option<TransferFunction>,
    cav_resp: TransferFunction,
    g2: Option<TransferFunction>,
}

impl AnalyticModel {
    /// `sampling_latency` adds the outer loop's block-average and hold delay
    /// (one slow sample) so the model mirrors the multi-rate simulation.
    pub fn new(scenario: &Scenario, sampling_latency: bool) -> Result<Self> {
        let slope = scenario.pdh_slope()?;
        let cav_resp = scenario.cavity.response();
        let latency = if sampling_latency {
            1.0 / scenario.rates.slow_hz
        } else {
            0.0
        };
        let lock = scenario.lock_config;
        let (g1, k) = if lock.inner_active() {
            let g1 = scenario.inner_open_loop()?;
            // controller and actuator: volts at the error point to hertz at the laser
            let controller = match scenario.inner_lock {
                InnerLock::Tight => make_pid(&scenario.pid1)?,
                InnerLock::Loose => TransferFunction::integrator(loose_lock_gain(
                    &scenario.pdh,
                    &scenario.cavity,
                    &scenario.fast_path(),
                )?),
            };
            let k = controller.series(&scenario.fast_path());
            (Some(g1), Some(k))
        } else {
            (None, None)
        };
        let g2 = match lock {
            LockConfig::Cascade => Some(scenario.outer_open_loop()?),
            LockConfig::SasOnly => Some(scenario.sas_only_open_loop()?),
            _ => None,
        }
        .map(|g| {
            let d = g.delay + latency;
            g.with_delay(d)
        });
        Ok(Self {
            lock,
            laser: scenario.laser_noise.clone(),
            cavity_noise: scenario.cavity.noise.clone(),
            ule: scenario.ule_noise.clone(),
            detector: scenario.pdh.detector_noise.clone(),
            slope,
            g1,
            k,
            cav_resp,
            g2,
        })
    }

    /// Transfer coefficients from (laser, cavity, detector, reference laser)
    /// to each channel.
    fn coefficients(&self, channel: Channel, f: f64) -> Result<[Complex64; 4]> {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let resp = |tf: &Option<TransferFunction>| tf.as_ref().map(|t| t.response(f)).unwrap_or(zero);
        let g1 = resp(&self.g1);
        let k = resp(&self.k);
        let g2 = resp(&self.g2);
        let singular = |d: Complex64| -> Result<()> {
            if d.norm() < 1e-12 {
                Err(Error::Singular { f_hz: f })
            } else {
                Ok(())
            }
        };
        // absolute laser and cavity-mode coefficients over (nu_L, nu_C0, n_d, nu_U)
        let (abs, cav) = match self.lock {
            LockConfig::FreeRun => ([one, zero, zero, zero], [zero, one, zero, zero]),
            LockConfig::UleReference => ([zero, zero, zero, one], [zero, one, zero, zero]),
            LockConfig::SasOnly => {
                singular(one + g2)?;
                ([one / (one + g2), zero, zero, zero], [zero, one, zero, zero])
            }
            LockConfig::LcOnly | LockConfig::Cascade => {
                singular(one + g1)?;
                let s1 = one / (one + g1);
                let t1 = g1 / (one + g1);
                let delta = one + t1 * g2;
                singular(delta)?;
                let abs = [s1 / delta, t1 / delta, -k * s1 / delta, zero];
                let cav = [-g2 * s1 / delta, one / delta, g2 * k * s1 / delta, zero];
                (abs, cav)
            }
        };
        let rel: [Complex64; 4] = std::array::from_fn(|i| abs[i] - cav[i]);
        Ok(match channel {
            Channel::Absolute => abs,
            Channel::Cavity => cav,
            Channel::Relative => rel,
            Channel::Error => {
                let h = self.cav_resp.response(f);
                let mut e: [Complex64; 4] = std::array::from_fn(|i| h * rel[i]);
                e[2] += one / self.slope;
                e
            }
        })
    }

    /// One-sided PSD of `channel` at `f`, Hz^2/Hz.
    pub fn channel_psd(&self, channel: Channel, f: f64) -> Result<f64> {
        if !(f > 0.0) {
            return Err(Error::Domain(format!(
                "analytic PSD evaluated at non-positive frequency {f}"
            )));
        }
        let c = self.coefficients(channel, f)?;
        Ok(c[0].norm_sqr() * self.laser.density(f)
            + c[1].norm_sqr() * self.cavity_noise.density(f)
            + c[2].norm_sqr() * self.detector.density(f)
            + c[3].norm_sqr() * self.ule.density(f))
    }

    /// Channel spectrum as a [`Psd`].
    pub fn psd(&self, channel: Channel) -> ChannelPsd<'_> {
        ChannelPsd { model: self, channel }
    }
}

pub struct ChannelPsd<'a> {
    model: &'a AnalyticModel,
    channel: Channel,
}

impl Psd for ChannelPsd<'_> {
    fn density(&self, f_hz: f64) -> f64 {
        self.model.channel_psd(self.channel, f_hz).unwrap_or(0.0)
    }
}

/// Absolute laser-frequency-noise PSD from the continuous-time loop algebra.
pub fn analytic_residual_psd(scenario: &Scenario, f: f64) -> Result<f64> {
    AnalyticModel::new(scenario, false)?.channel_psd(Channel::Absolute, f)
}

/// Output of [`simulate`]. All frequency series are recorded at
/// `rates.record_hz()`; actuator records at the slow rate.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub lock_config: LockConfig,
    pub absolute_freq_noise: TimeSeries,
    pub relative_freq_noise: TimeSeries,
    pub cavity_mode_noise: TimeSeries,
    pub error_signal: TimeSeries,
    /// Block-averaged PID1 output (V).
    pub fast_actuator: TimeSeries,
    /// PID2 output (V), driving the cavity PZT or the laser's slow port.
    pub slow_actuator: TimeSeries,
    pub saturation_events: usize,
    pub settle_s: f64,
}

impl SimResult {
    pub fn channel(&self, channel: Channel) -> &TimeSeries {
        match channel {
            Channel::Absolute => &self.absolute_freq_noise,
            Channel::Relative => &self.relative_freq_noise,
            Channel::Cavity => &self.cavity_mode_noise,
            Channel::Error => &self.error_signal,
        }
    }

    /// `channel` with the settling transient removed.
    pub fn settled(&self, channel: Channel) -> Result<TimeSeries> {
        self.channel(channel).tail_from(self.settle_s)
    }
}

fn rms_of(psd: &dyn Psd, f_lo: f64, f_hi: f64) -> Result<f64> {
    let s = SpectrumSeries::from_psd(psd, f_lo, f_hi, 4000)?;
    let f = s.frequencies();
    let v = s.values();
    let area: f64 = (1..f.len()).map(|i| 0.5 * (v[i] + v[i - 1]) * (f[i] - f[i - 1])).sum();
    Ok(area.sqrt())
}

fn filter_of(tf: &TransferFunction, fs: f64) -> Result<DigitalFilter> {
    discretize(tf, fs)
}

const CHUNK: usize = 1 << 16;

/// Steps both loops over synthesized noise. The inner loop runs at the fast
/// rate with the configured dead time; the outer loop sees block averages at
/// the slow rate and holds its output between updates.
pub fn simulate(scenario: &Scenario) -> Result<SimResult> {
    scenario.validate()?;
    let lock = scenario.lock_config;
    let rates = scenario.rates;
    let fs = rates.fast_hz;
    let n = scenario.fast_steps();
    let ratio = rates.slow_ratio();
    let synth = SynthConfig::default();
    let seed = scenario.seed;
    let d1 = scenario.pdh_slope()?;
    let d2 = sas_slope(&scenario.sas)?;

    let stream = |model: &PsdModel, id: u64| NoiseStream::for_model(model, fs, n, derive_seed(seed, id), synth);
    let use_ule = lock == LockConfig::UleReference;
    let mut laser = if use_ule {
        stream(&scenario.ule_noise, STREAM_ULE)?
    } else {
        stream(&scenario.laser_noise, STREAM_LASER)?
    };
    let mut cavity = stream(&scenario.cavity.noise, STREAM_CAVITY)?;
    let mut detector = stream(&scenario.pdh.detector_noise, STREAM_DETECTOR)?;

    // instability thresholds from open-loop RMS
    let f_lo = 1.0 / scenario.timing.duration_s;
    let both = crate::noise::compose(&[scenario.laser_noise.clone(), scenario.cavity.noise.clone()])?;
    let limit = 10.0 * rms_of(&both, f_lo, fs / 2.0)?.max(1.0);

    let inner_active = lock.inner_active();
    let pid1_cfg = match scenario.inner_lock {
        InnerLock::Tight => scenario.pid1,
        InnerLock::Loose => PidConfig {
            kp: 0.0,
            ki: loose_lock_gain(&scenario.pdh, &scenario.cavity, &scenario.fast_path())?,
            kd: 0.0,
            ..scenario.pid1
        },
    };
    let mut pid1 = PidController::new(pid1_cfg, fs)?;
    let mut cav_filter = filter_of(&scenario.cavity.response(), fs)?;
    let fast = scenario.fast_actuator;
    let mut fast_filter = filter_of(&TransferFunction::low_pass(fast.bandwidth_hz), fs)?;
    // one sample of latency is structural: the actuator output of step i acts at step i + 1
    let dead = ((fast.delay_s * fs).round() as usize).saturating_sub(1);
    let mut dead_line = filter_of(&TransferFunction::pure_delay(dead as f64 / fs), fs)?;

    let slow_fs = rates.slow_hz;
    let outer_mode = match lock {
        LockConfig::Cascade => Some((scenario.cavity.pzt_bandwidth_hz, scenario.cavity.pzt_gain_hz_per_v)),
        LockConfig::SasOnly => Some((
            scenario.slow_actuator.bandwidth_hz,
            scenario.slow_actuator.gain_hz_per_v,
        )),
        _ => None,
    };
    let mut lockin = filter_of(&scenario.sas.lockin(), slow_fs)?;
    let mut pid2 = PidController::new(scenario.pid2, slow_fs)?;
    let (slow_bw, slow_gain) = outer_mode.unwrap_or((1.0, 0.0));
    let mut slow_filter = filter_of(&TransferFunction::low_pass(slow_bw), slow_fs)?;
    let slow_delay = ((scenario.slow_actuator.delay_s * slow_fs).round()) as usize;
    let mut slow_dead = filter_of(&TransferFunction::pure_delay(slow_delay as f64 / slow_fs), slow_fs)?;
    let engage_step = (scenario.timing.outer_engage_s * fs).round() as usize;

    let dec = rates.record_decimation;
    let mut rec_abs = Decimator::new(fs, dec)?;
    let mut rec_cav = Decimator::new(fs, dec)?;
    let mut rec_err = Decimator::new(fs, dec)?;
    let cap = n / dec + 1;
    let mut abs_out = Vec::with_capacity(cap);
    let mut cav_out = Vec::with_capacity(cap);
    let mut err_out = Vec::with_capacity(cap);
    let mut fast_rec = Vec::with_capacity(n / ratio + 1);
    let mut slow_rec = Vec::with_capacity(n / ratio + 1);

    let mut buf_l = vec![0.0; CHUNK];
    let mut buf_c = vec![0.0; CHUNK];
    let mut buf_d = vec![0.0; CHUNK];

    let mut fast_out = 0.0; // Hz, laser correction from the current port
    let mut slow_out = 0.0; // Hz, cavity or laser correction from the outer loop
    let mut block_sum = 0.0;
    let mut block_u = 0.0;
    let mut block_len = 0;
    let mut u2 = 0.0;

    let mut step = 0;
    while step < n {
        let len = CHUNK.min(n - step);
        laser.fill(&mut buf_l[..len]);
        cavity.fill(&mut buf_c[..len]);
        detector.fill(&mut buf_d[..len]);
        for i in 0..len {
            let mut nu_l = buf_l[i] - fast_out;
            let mut nu_c = buf_c[i];
            match lock {
                LockConfig::Cascade => nu_c -= slow_out,
                LockConfig::SasOnly => nu_l -= slow_out,
                _ => {}
            }
            let rel = nu_l - nu_c;
            let e1 = d1 * cav_filter.step(rel) + buf_d[i];
            let mut u1 = 0.0;
            if inner_active {
                u1 = pid1.step(e1);
                fast_out = fast.gain_hz_per_v * fast_filter.step(dead_line.step(u1));
                if !(rel.abs() <= limit) {
                    return Err(unstable("inner PDH", step + i, rel, limit));
                }
            }
            block_sum += nu_l;
            block_u += u1;
            block_len += 1;
            if block_len == ratio {
                if let Some(_) = outer_mode {
                    if step + i >= engage_step {
                        let mean = block_sum / ratio as f64;
                        let e2 = d2 * mean;
                        u2 = pid2.step(lockin.step(e2));
                        slow_out = slow_gain * slow_filter.step(slow_dead.step(u2));
                    }
                    if !(nu_l.abs() <= limit) {
                        let name = if lock == LockConfig::Cascade {
                            "outer SAS"
                        } else {
                            "SAS"
                        };
                        return Err(unstable(name, step + i, nu_l, limit));
                    }
                }
                fast_rec.push(block_u / ratio as f64);
                slow_rec.push(u2);
                block_sum = 0.0;
                block_u = 0.0;
                block_len = 0;
            }
            if !nu_l.is_finite() {
                return Err(unstable(lock.name(), step + i, nu_l, limit));
            }
            if let Some(y) = rec_abs.push(nu_l) {
                abs_out.push(y);
            }
            if let Some(y) = rec_cav.push(nu_c) {
                cav_out.push(y);
            }
            if let Some(y) = rec_err.push(e1 / d1) {
                err_out.push(y);
            }
        }
        step += len;
    }

    let rec_fs = rates.record_hz();
    let rel_out: Vec<f64> = abs_out.iter().zip(&cav_out).map(|(a, c)| a - c).collect();
    Ok(SimResult {
        lock_config: lock,
        absolute_freq_noise: TimeSeries::new(rec_fs, abs_out, Unit::HzDeviation)?,
        relative_freq_noise: TimeSeries::new(rec_fs, rel_out, Unit::HzDeviation)?,
        cavity_mode_noise: TimeSeries::new(rec_fs, cav_out, Unit::HzDeviation)?,
        error_signal: TimeSeries::new(rec_fs, err_out, Unit::HzDeviation)?,
        fast_actuator: TimeSeries::new(slow_fs, fast_rec, Unit::Volts)?,
        slow_actuator: TimeSeries::new(slow_fs, slow_rec, Unit::Volts)?,
        saturation_events: pid1.saturation_events() + pid2.saturation_events(),
        settle_s: scenario.timing.settle_s,
    })
}

fn unstable(loop_name: &str, step: usize, value: f64, limit: f64) -> Error {
    Error::Unstable {
        loop_name: loop_name.to_string(),
        detail: format!("residual {value:.3e} Hz at fast step {step} exceeds {limit:.3e} Hz (10x open-loop RMS)"),
    }
}

/// Runs scenarios that differ only in lock configuration, with shared noise.
pub fn run_comparison(scenarios: &[Scenario]) -> Result<BTreeMap<LockConfig, SimResult>> {
    let Some(first) = scenarios.first() else {
        return Err(Error::arg("comparison needs at least one scenario"));
    };
    for s in &scenarios[1..] {
        let same = Scenario {
            lock_config: first.lock_config,
            ..s.clone()
        };
        if &same != first {
            return Err(Error::arg(format!(
                "scenario {} differs from {} in more than the lock configuration",
                s.lock_config, first.lock_config
            )));
        }
    }
    let mut out = BTreeMap::new();
    for s in scenarios {
        out.insert(s.lock_config, simulate(s)?);
    }
    Ok(out)
}

/// Seed of realization `r`; realization 0 uses the scenario seed itself.
pub fn realization_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, 1000 + r as u64)
    }
}

/// Beat spectra of the absolute laser noise for each lock configuration,
/// averaged over `realizations` noise draws. Every realization is shared by
/// all configurations. `inspect` sees each run before its series are dropped.
pub fn beat_ensemble(
    scenario: &Scenario,
    locks: &[LockConfig],
    realizations: usize,
    rbw: f64,
    mut inspect: impl FnMut(usize, &SimResult) -> Result<()>,
) -> Result<BTreeMap<LockConfig, SpectrumSeries>> {
    if realizations == 0 {
        return Err(Error::arg("beat ensemble needs at least one realization"));
    }
    let mut spectra: BTreeMap<LockConfig, Vec<SpectrumSeries>> = BTreeMap::new();
    for r in 0..realizations {
        for &lock in locks {
            let s = Scenario {
                seed: realization_seed(scenario.seed, r),
                ..scenario.with_lock(lock)
            };
            let run = simulate(&s)?;
            inspect(r, &run)?;
            let beat = beat_spectrum(&run.settled(Channel::Absolute)?, None, rbw)?;
            spectra.entry(lock).or_default().push(beat);
        }
    }
    spectra
        .into_iter()
        .map(|(lock, list)| Ok((lock, average_spectra(&list)?)))
        .collect()
}
