//! Piecewise power-law noise spectra and Gaussian time-series synthesis.
//!
//! All densities are one-sided: the variance of a process equals the integral
//! of its density over positive frequencies. A two-sided density carries half
//! the value at every frequency.
//!
//! Synthesis draws complex Gaussian spectra weighted by the square root of the
//! target density and inverse transforms them. Series longer than one block are
//! assembled from two bands: everything below a split frequency is synthesized
//! once at a decimated rate and interpolated up, everything above it is built
//! from independent blocks cross-faded with a power-complementary sine window.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{TimeSeries, Unit};

/// Anything that can report a one-sided spectral density at a Fourier frequency.
pub trait Psd {
    /// Density at `f_hz`; zero where the spectrum is undefined.
    fn density(&self, f_hz: f64) -> f64;
}

impl<T: Psd + ?Sized> Psd for &T {
    fn density(&self, f_hz: f64) -> f64 {
        (**self).density(f_hz)
    }
}

/// Adapts a closure into a [`Psd`].
pub struct FnPsd<F>(pub F);

impl<F: Fn(f64) -> f64> Psd for FnPsd<F> {
    fn density(&self, f_hz: f64) -> f64 {
        (self.0)(f_hz)
    }
}

/// One power-law piece `S(f) = amplitude_ref * (f / f_ref)^exponent` on `[f_lo, f_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdSegment {
    #[serde(rename = "f_lo_hz")]
    pub f_lo: f64,
    #[serde(rename = "f_hi_hz")]
    pub f_hi: f64,
    pub exponent: f64,
    pub amplitude_ref: f64,
    #[serde(rename = "f_ref_hz")]
    pub f_ref: f64,
}

impl PsdSegment {
    pub fn new(f_lo: f64, f_hi: f64, exponent: f64, amplitude_ref: f64, f_ref: f64) -> Result<Self> {
        let seg = Self {
            f_lo,
            f_hi,
            exponent,
            amplitude_ref,
            f_ref,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.f_lo, self.f_hi, self.exponent, self.amplitude_ref, self.f_ref]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("PSD segment fields must be finite"));
        }
        if !(self.f_lo >= 0.0 && self.f_lo < self.f_hi) {
            return Err(Error::config(format!(
                "PSD segment needs 0 <= f_lo < f_hi, got [{}, {}]",
                self.f_lo, self.f_hi
            )));
        }
        if !(self.f_ref >= self.f_lo && self.f_ref <= self.f_hi && self.f_ref > 0.0) {
            return Err(Error::config(format!(
                "PSD segment reference frequency {} lies outside [{}, {}]",
                self.f_ref, self.f_lo, self.f_hi
            )));
        }
        if self.amplitude_ref <= 0.0 {
            return Err(Error::config("PSD segment amplitude must be positive"));
        }
        Ok(())
    }

    pub fn covers(&self, f: f64) -> bool {
        f >= self.f_lo && f < self.f_hi
    }

    pub fn value(&self, f: f64) -> f64 {
        self.amplitude_ref * (f / self.f_ref).powf(self.exponent)
    }
}

/// Sum of power-law segments plus an optional white floor.
///
/// A model parsed from configuration has non-overlapping segments. Models built
/// with [`compose`] may stack segments from several sources; evaluation always
/// sums every segment that covers the queried frequency.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdModel {
    #[serde(default)]
    pub segments: Vec<PsdSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

/// Result of [`psd_eval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdEval {
    pub density: f64,
    /// False when no segment covers the frequency and there is no floor.
    pub defined: bool,
}

impl PsdModel {
    pub fn new(segments: Vec<PsdSegment>, floor: Option<f64>) -> Result<Self> {
        let model = Self { segments, floor };
        model.validate()?;
        Ok(model)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn white(level: f64) -> Self {
        Self {
            segments: Vec::new(),
            floor: Some(level),
        }
    }

    pub fn power_law(f_lo: f64, f_hi: f64, exponent: f64, amplitude_ref: f64, f_ref: f64) -> Result<Self> {
        Self::new(vec![PsdSegment::new(f_lo, f_hi, exponent, amplitude_ref, f_ref)?], None)
    }

    pub fn with_floor(mut self, level: f64) -> Self {
        self.floor = Some(level);
        self
    }

    /// Checks segment validity and that segments do not overlap.
    pub fn validate(&self) -> Result<()> {
        for seg in &self.segments {
            seg.validate()?;
        }
        if let Some(floor) = self.floor {
            if !(floor >= 0.0 && floor.is_finite()) {
                return Err(Error::config(format!("PSD floor must be non-negative, got {floor}")));
            }
        }
        let mut sorted: Vec<_> = self.segments.iter().collect();
        sorted.sort_by(|a, b| a.f_lo.total_cmp(&b.f_lo));
        for pair in sorted.windows(2) {
            if pair[0].f_hi > pair[1].f_lo {
                return Err(Error::config(format!(
                    "PSD segments [{}, {}) and [{}, {}) overlap",
                    pair[0].f_lo, pair[0].f_hi, pair[1].f_lo, pair[1].f_hi
                )));
            }
        }
        Ok(())
    }

    /// Multiplies every density by `factor`.
    pub fn scaled(&self, factor: f64) -> PsdModel {
        PsdModel {
            segments: self
                .segments
                .iter()
                .map(|s| PsdSegment {
                    amplitude_ref: s.amplitude_ref * factor,
                    ..*s
                })
                .collect(),
            floor: self.floor.map(|f| f * factor),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.segments.is_empty() && self.floor.unwrap_or(0.0) == 0.0
    }

    fn is_white(&self) -> bool {
        self.segments.is_empty()
    }

    fn eval_unchecked(&self, f: f64) -> PsdEval {
        let mut density = self.floor.unwrap_or(0.0);
        let mut defined = self.floor.is_some();
        for seg in self.segments.iter().filter(|s| s.covers(f)) {
            density += seg.value(f);
            defined = true;
        }
        PsdEval { density, defined }
    }
}

impl Psd for PsdModel {
    fn density(&self, f_hz: f64) -> f64 {
        if f_hz > 0.0 {
            self.eval_unchecked(f_hz).density
        } else {
            0.0
        }
    }
}

/// Evaluates a model at Fourier frequency `f_hz`.
pub fn psd_eval(model: &PsdModel, f_hz: f64) -> Result<PsdEval> {
    if !(f_hz > 0.0) {
        return Err(Error::Domain(format!("PSD evaluated at non-positive frequency {f_hz}")));
    }
    Ok(model.eval_unchecked(f_hz))
}

/// Sum of several models.
pub fn compose(models: &[PsdModel]) -> Result<PsdModel> {
    if models.is_empty() {
        return Err(Error::arg("compose needs at least one model"));
    }
    let segments = models.iter().flat_map(|m| m.segments.iter().copied()).collect();
    let floor = models
        .iter()
        .filter_map(|m| m.floor)
        .fold(None, |acc: Option<f64>, f| Some(acc.unwrap_or(0.0) + f));
    Ok(PsdModel { segments, floor })
}

/// Derives an independent stream seed; used so each noise source and block gets its own RNG.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthesis tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Samples per high-band block; a power of two of at least 2^12.
    pub block_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { block_len: 1 << 18 }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if !self.block_len.is_power_of_two() || self.block_len < 1 << 12 {
            return Err(Error::arg(format!(
                "synthesis block length must be a power of two >= 4096, got {}",
                self.block_len
            )));
        }
        Ok(())
    }

    /// Rate reduction of the low band.
    fn low_band_decimation(&self) -> usize {
        self.block_len / 1024
    }

    /// First high-band bin; the low band covers everything below it.
    fn split_bin(&self) -> usize {
        self.block_len / (64 * self.low_band_decimation())
    }
}

/// Synthesizes `n` samples of Gaussian noise with one-sided density `psd`.
pub fn synthesize(psd: &dyn Psd, sample_rate: f64, n: usize, seed: u64) -> Result<TimeSeries> {
    synthesize_with(psd, sample_rate, n, seed, SynthConfig::default())
}

pub fn synthesize_with(
    psd: &dyn Psd,
    sample_rate: f64,
    n: usize,
    seed: u64,
    config: SynthConfig,
) -> Result<TimeSeries> {
    let mut stream = NoiseStream::new(psd, sample_rate, n, seed, config)?;
    let mut out = vec![0.0; n];
    stream.fill(&mut out);
    TimeSeries::new(sample_rate, out, Unit::HzDeviation)
}

/// Synthesizes a [`PsdModel`]; white models skip the transform.
pub fn synthesize_model(model: &PsdModel, sample_rate: f64, n: usize, seed: u64) -> Result<TimeSeries> {
    let mut stream = NoiseStream::for_model(model, sample_rate, n, seed, SynthConfig::default())?;
    let mut out = vec![0.0; n];
    stream.fill(&mut out);
    TimeSeries::new(sample_rate, out, Unit::HzDeviation)
}

/// Sequential generator of a synthesized series; chunked reads reproduce
/// [`synthesize`] exactly.
pub struct NoiseStream {
    n: usize,
    produced: usize,
    source: Source,
}

enum Source {
    Zero,
    White { sigma: f64, rng: ChaCha8Rng },
    Buffered { samples: Vec<f64> },
    Banded(Box<Banded>),
}

struct Banded {
    low: Vec<f64>,
    decimation: usize,
    weights: Vec<[f64; 4]>,
    high: HighBand,
}

struct HighBand {
    block_len: usize,
    seed: u64,
    /// Standard deviation of each complex bin, full two-sided layout.
    sigma: Vec<f64>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    /// Block `j` and `j + 1` for the current hop interval `j`.
    current: Vec<f64>,
    next: Vec<f64>,
    next_index: usize,
    spare: Option<(usize, Vec<f64>)>,
    scratch: Vec<Complex64>,
}

impl NoiseStream {
    pub fn new(psd: &dyn Psd, sample_rate: f64, n: usize, seed: u64, config: SynthConfig) -> Result<Self> {
        Self::build(psd, None, sample_rate, n, seed, config)
    }

    pub fn for_model(model: &PsdModel, sample_rate: f64, n: usize, seed: u64, config: SynthConfig) -> Result<Self> {
        Self::build(model, Some(model), sample_rate, n, seed, config)
    }

    fn build(
        psd: &dyn Psd,
        model: Option<&PsdModel>,
        sample_rate: f64,
        n: usize,
        seed: u64,
        config: SynthConfig,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::arg(format!("synthesis needs n >= 2, got {n}")));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::arg(format!("sample rate must be positive, got {sample_rate}")));
        }
        config.validate()?;
        let source = match model {
            Some(m) if m.is_zero() => Source::Zero,
            Some(m) if m.is_white() => Source::White {
                sigma: (m.floor.unwrap_or(0.0) * sample_rate / 2.0).sqrt(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            _ if n <= config.block_len => Source::Buffered {
                samples: single_shot(psd, sample_rate, n, seed),
            },
            _ => Source::Banded(Box::new(Banded::new(psd, sample_rate, n, seed, config)?)),
        };
        Ok(Self { n, produced: 0, source })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn remaining(&self) -> usize {
        self.n - self.produced
    }

    /// Writes the next `out.len()` samples; past the end the output is zero.
    pub fn fill(&mut self, out: &mut [f64]) {
        let take = out.len().min(self.remaining());
        let start = self.produced;
        match &mut self.source {
            Source::Zero => out[..take].iter_mut().for_each(|x| *x = 0.0),
            Source::White { sigma, rng } => {
                for x in &mut out[..take] {
                    let g: f64 = StandardNormal.sample(rng);
                    *x = *sigma * g;
                }
            }
            Source::Buffered { samples } => out[..take].copy_from_slice(&samples[start..start + take]),
            Source::Banded(banded) => banded.fill(start, &mut out[..take]),
        }
        out[take..].iter_mut().for_each(|x| *x = 0.0);
        self.produced += take;
    }
}

fn inverse_planner(len: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_inverse(len)
}

/// Draws a circular complex Gaussian spectrum with per-bin standard deviation
/// `sigma[k]` and inverse transforms it in place.
fn draw_block(sigma: &[f64], rng: &mut ChaCha8Rng, fft: &dyn Fft<f64>, buf: &mut Vec<Complex64>) {
    buf.clear();
    buf.extend(sigma.iter().map(|&s| {
        if s == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im) * (s * std::f64::consts::FRAC_1_SQRT_2)
        }
    }));
    fft.process(buf);
}

/// Two-sided bin sigmas so that the real part of the inverse transform has
/// one-sided density `psd`.
fn bin_sigmas(psd: &dyn Psd, sample_rate: f64, len: usize, first_bin: usize) -> Vec<f64> {
    let df = sample_rate / len as f64;
    let mut sigma = vec![0.0; len];
    for k in first_bin.max(1)..=len / 2 {
        let s = psd.density(k as f64 * df).max(0.0);
        let v = (s * sample_rate / len as f64).sqrt();
        sigma[k] = v;
        sigma[len - k] = v;
    }
    sigma
}

fn single_shot(psd: &dyn Psd, sample_rate: f64, n: usize, seed: u64) -> Vec<f64> {
    let sigma = bin_sigmas(psd, sample_rate, n, 1);
    let fft = inverse_planner(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::with_capacity(n);
    draw_block(&sigma, &mut rng, fft.as_ref(), &mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Restricts a density to frequencies strictly below `cutoff`.
struct LowPart<'a> {
    inner: &'a dyn Psd,
    cutoff: f64,
}

impl Psd for LowPart<'_> {
    fn density(&self, f_hz: f64) -> f64 {
        if f_hz < self.cutoff {
            self.inner.density(f_hz)
        } else {
            0.0
        }
    }
}

fn lagrange_weights(mu: f64) -> [f64; 4] {
    [
        -mu * (mu - 1.0) * (mu - 2.0) / 6.0,
        (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0,
        -(mu + 1.0) * mu * (mu - 2.0) / 2.0,
        (mu + 1.0) * mu * (mu - 1.0) / 6.0,
    ]
}

impl Banded {
    fn new(psd: &dyn Psd, sample_rate: f64, n: usize, seed: u64, config: SynthConfig) -> Result<Self> {
        let block_len = config.block_len;
        let decimation = config.low_band_decimation();
        let split_bin = config.split_bin();
        let f_split = split_bin as f64 * sample_rate / block_len as f64;

        let low_rate = sample_rate / decimation as f64;
        let low_len = n / decimation + 4;
        let low_psd = LowPart {
            inner: psd,
            cutoff: f_split,
        };
        let mut low_stream = NoiseStream::new(&low_psd, low_rate, low_len, derive_seed(seed, 0x10), config)?;
        let mut low = vec![0.0; low_len];
        low_stream.fill(&mut low);

        let weights = (0..decimation)
            .map(|p| lagrange_weights(p as f64 / decimation as f64))
            .collect();

        let sigma = bin_sigmas(psd, sample_rate, block_len, split_bin);
        let window = (0..block_len)
            .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / block_len as f64).sin())
            .collect();
        let mut high = HighBand {
            block_len,
            seed: derive_seed(seed, 0x20),
            sigma,
            window,
            fft: inverse_planner(block_len),
            current: Vec::new(),
            next: Vec::new(),
            next_index: 0,
            spare: None,
            scratch: Vec::with_capacity(block_len),
        };
        high.current = high.block(0);
        high.next = high.block(1);
        high.next_index = 2;
        Ok(Self {
            low,
            decimation,
            weights,
            high,
        })
    }

    fn fill(&mut self, start: usize, out: &mut [f64]) {
        let hop = self.high.block_len / 2;
        for (i, x) in out.iter_mut().enumerate() {
            let t = start + i;
            let interval = t / hop;
            while self.high.next_index < interval + 2 {
                self.high.advance();
            }
            let offset_next = t - interval * hop;
            let offset_current = offset_next + hop;
            let high = self.high.window[offset_current] * self.high.current[offset_current]
                + self.high.window[offset_next] * self.high.next[offset_next];

            let base = t / self.decimation + 1;
            let w = &self.weights[t % self.decimation];
            let low = w[0] * self.low[base - 1]
                + w[1] * self.low[base]
                + w[2] * self.low[base + 1]
                + w[3] * self.low[base + 2];
            *x = high + low;
        }
    }
}

impl HighBand {
    /// Real block `index`; blocks come in pairs from one complex transform.
    fn block(&mut self, index: usize) -> Vec<f64> {
        if let Some((i, b)) = self.spare.take() {
            if i == index {
                return b;
            }
        }
        let pair = index / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, pair as u64));
        draw_block(&self.sigma, &mut rng, self.fft.as_ref(), &mut self.scratch);
        let re: Vec<f64> = self.scratch.iter().map(|c| c.re).collect();
        let im: Vec<f64> = self.scratch.iter().map(|c| c.im).collect();
        if index % 2 == 0 {
            self.spare = Some((index + 1, im));
            re
        } else {
            im
        }
    }

    fn advance(&mut self) {
        let fresh = self.block(self.next_index);
        self.current = std::mem::replace(&mut self.next, fresh);
        self.next_index += 1;
    }
}
