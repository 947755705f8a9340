use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical meaning of the samples in a [`TimeSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    HzDeviation,
    Volts,
    Transmission,
    Radians,
}

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    sample_rate: f64,
    samples: Vec<f64>,
    unit: Unit,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, samples: Vec<f64>, unit: Unit) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::arg(format!("sample rate must be positive, got {sample_rate}")));
        }
        if samples.is_empty() {
            return Err(Error::arg("time series needs at least one sample"));
        }
        Ok(Self {
            sample_rate,
            samples,
            unit,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Sub-series starting at `start_s` seconds.
    pub fn tail_from(&self, start_s: f64) -> Result<TimeSeries> {
        let skip = (start_s * self.sample_rate).round().max(0.0) as usize;
        if skip >= self.samples.len() {
            return Err(Error::arg(format!(
                "cannot skip {start_s} s of a {} s series",
                self.duration()
            )));
        }
        TimeSeries::new(self.sample_rate, self.samples[skip..].to_vec(), self.unit)
    }

    pub fn scaled(&self, factor: f64) -> TimeSeries {
        TimeSeries {
            sample_rate: self.sample_rate,
            samples: self.samples.iter().map(|x| x * factor).collect(),
            unit: self.unit,
        }
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}
