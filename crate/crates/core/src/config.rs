//! TOML scenario files.

use serde::{Deserialize, Serialize};

use crate::cascade::{InnerLock, LockConfig, Rates, Scenario, Timing};
use crate::error::{Error, Result};
use crate::lti::{ActuatorConfig, PidConfig};
use crate::noise::PsdModel;
use crate::pdh::{CavityModel, PdhConfig};
use crate::readout::EitConfig;
use crate::sas::SasConfig;

/// The calibrated default scenario shipped with the tool.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

/// Spectral-analysis settings shared by the commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Beat-spectrum resolution bandwidth.
    pub rbw_hz: f64,
    /// Independent noise realizations averaged into each beat spectrum.
    pub beat_realizations: usize,
    pub min_averages: usize,
    /// Fit window (full width) around the beat peak; absent means automatic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window_hz: Option<f64>,
    pub readout_band_lo_hz: f64,
    pub readout_band_hi_hz: f64,
    pub bands_per_decade: usize,
}

/// Targets and search range for the `calibrate` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub target_linewidth_hz: f64,
    pub target_suppression_db: f64,
    pub suppression_at_hz: f64,
    /// Bisection bracket on the cavity-noise scale factor.
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(default = "default_lock")]
    pub lock_config: LockConfig,
    pub laser: PsdModel,
    pub cavity: CavityModel,
    pub pdh: PdhConfig,
    pub sas: SasConfig,
    pub pid1: PidConfig,
    pub pid2: PidConfig,
    pub fast_actuator: ActuatorConfig,
    pub slow_actuator: ActuatorConfig,
    pub ule: PsdModel,
    pub rates: Rates,
    pub sim: Timing,
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eit: Option<EitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationConfig>,
}

fn default_lock() -> LockConfig {
    LockConfig::Cascade
}

impl Config {
    /// Parses and validates. Syntax and type errors carry line and column.
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(describe_toml_error(text, &e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_config() -> Config {
        Config::parse(DEFAULT_CONFIG).expect("shipped default configuration is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario().validate()?;
        let a = &self.analysis;
        if !(a.rbw_hz > 0.0) || a.min_averages == 0 || a.bands_per_decade == 0 || a.beat_realizations == 0 {
            return Err(Error::config(
                "analysis needs rbw_hz > 0 and at least one average, band per decade and beat realization",
            ));
        }
        if !(a.readout_band_lo_hz > 0.0 && a.readout_band_hi_hz > a.readout_band_lo_hz) {
            return Err(Error::config("analysis readout band needs 0 < lo < hi"));
        }
        if let Some(eit) = &self.eit {
            eit.validate()?;
        }
        if let Some(c) = &self.calibration {
            if !(c.scale_lo > 0.0 && c.scale_hi > c.scale_lo && c.target_linewidth_hz > 0.0) {
                return Err(Error::config(
                    "calibration needs 0 < scale_lo < scale_hi and a positive target",
                ));
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            laser_noise: self.laser.clone(),
            cavity: self.cavity.clone(),
            pdh: self.pdh.clone(),
            sas: self.sas.clone(),
            pid1: self.pid1,
            pid2: self.pid2,
            fast_actuator: self.fast_actuator,
            slow_actuator: self.slow_actuator,
            ule_noise: self.ule.clone(),
            rates: self.rates,
            timing: self.sim,
            seed: self.seed,
            lock_config: self.lock_config,
            inner_lock: InnerLock::Tight,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
            format!("line {line}, column {col}: {msg}")
        }
        None => msg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parses_and_round_trips() {
        let cfg = Config::default_config();
        let text = cfg.to_toml().unwrap();
        assert_eq!(Config::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = DEFAULT_CONFIG.replacen("[laser]", "[laser]\nbogus_key = 1", 1);
        let err = Config::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("bogus_key"), "{err}");
    }

    #[test]
    fn unknown_lock_lists_choices() {
        let bad = DEFAULT_CONFIG.replacen("lock_config = \"cascade\"", "lock_config = \"tight\"", 1);
        let err = Config::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("cascade") && err.contains("free_run"), "{err}");
    }
}
