//! Welch PSD estimation, beat-note spectra, lineshape fitting and the
//! beta-separation-line linewidth estimate.

use std::f64::consts::{LN_10, LN_2, PI};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{discretize, DigitalFilter, TransferFunction};
use crate::noise::Psd;
use crate::series::{TimeSeries, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    /// One-sided density, squared series units per Hz.
    Psd,
    /// Beat-note power per bin, normalized to unit total; frequencies are offsets.
    BeatPower,
}

/// Sampled spectrum on a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSeries {
    frequencies: Vec<f64>,
    values: Vec<f64>,
    kind: SpectrumKind,
    averaging: usize,
}

impl SpectrumSeries {
    pub fn new(frequencies: Vec<f64>, values: Vec<f64>, kind: SpectrumKind, averaging: usize) -> Result<Self> {
        if frequencies.is_empty() || frequencies.len() != values.len() {
            return Err(Error::arg(
                "spectrum needs matching, non-empty frequency and value lists",
            ));
        }
        if frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("spectrum frequencies must be strictly increasing"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("spectrum values must be finite and non-negative"));
        }
        Ok(Self {
            frequencies,
            values,
            kind,
            averaging,
        })
    }

    /// Samples `psd` on `points` log-spaced frequencies from `f_lo` to `f_hi`.
    pub fn from_psd(psd: &dyn Psd, f_lo: f64, f_hi: f64, points: usize) -> Result<Self> {
        if !(f_lo > 0.0 && f_hi > f_lo) || points < 2 {
            return Err(Error::arg("log grid needs 0 < f_lo < f_hi and at least two points"));
        }
        let step = (f_hi / f_lo).ln() / (points - 1) as f64;
        let frequencies: Vec<f64> = (0..points).map(|i| f_lo * (step * i as f64).exp()).collect();
        let values = frequencies.iter().map(|&f| psd.density(f).max(0.0)).collect();
        Self::new(frequencies, values, SpectrumKind::Psd, 0)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    /// Number of averaged segments (0 for analytic spectra).
    pub fn averaging(&self) -> usize {
        self.averaging
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid spacing for uniform grids, otherwise the smallest spacing.
    pub fn resolution(&self) -> f64 {
        self.frequencies
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, factor: f64) -> SpectrumSeries {
        SpectrumSeries {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Mean value over bins with `lo <= f < hi`, and the bin count.
    pub fn band_average(&self, lo: f64, hi: f64) -> Option<(f64, usize)> {
        let start = self.frequencies.partition_point(|&f| f < lo);
        let end = self.frequencies.partition_point(|&f| f < hi);
        if end <= start {
            return None;
        }
        let n = end - start;
        Some((self.values[start..end].iter().sum::<f64>() / n as f64, n))
    }

    /// True when the grid spans `[lo, hi]`.
    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        self.frequencies[0] <= lo && *self.frequencies.last().unwrap() >= hi
    }
}

impl Psd for SpectrumSeries {
    /// Log-log interpolation inside the grid, zero outside.
    fn density(&self, f_hz: f64) -> f64 {
        let f = &self.frequencies;
        if f_hz < f[0] || f_hz > *f.last().unwrap() {
            return 0.0;
        }
        let i = f.partition_point(|&x| x <= f_hz);
        if i == 0 {
            return self.values[0];
        }
        if i >= f.len() {
            return *self.values.last().unwrap();
        }
        let (f0, f1) = (f[i - 1], f[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        if v0 > 0.0 && v1 > 0.0 && f0 > 0.0 {
            let t = (f_hz / f0).ln() / (f1 / f0).ln();
            (v0.ln() + t * (v1.ln() - v0.ln())).exp()
        } else {
            v0 + (v1 - v0) * (f_hz - f0) / (f1 - f0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided Welch density. Each segment has its mean removed; the DC bin is
/// omitted, so the grid runs from `fs / segment_len` to Nyquist.
pub fn welch_psd(x: &TimeSeries, segment_len: usize, overlap: f64, window: Window) -> Result<SpectrumSeries> {
    if segment_len < 8 {
        return Err(Error::arg(format!(
            "Welch segment length must be >= 8, got {segment_len}"
        )));
    }
    if segment_len > x.len() {
        return Err(Error::arg(format!(
            "Welch segment length {segment_len} exceeds series length {}",
            x.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::arg(format!("Welch overlap must be in [0, 1), got {overlap}")));
    }
    let w = match window {
        Window::Hann => hann(segment_len),
    };
    let hop = ((segment_len as f64 * (1.0 - overlap)).round() as usize).max(1);
    let fs = x.sample_rate();
    let data = x.samples();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let half = segment_len / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    let mut count = 0;
    let mut start = 0;
    while start + segment_len <= data.len() {
        let seg = &data[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((b, s), wi) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new((s - mean) * wi, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let w_power: f64 = w.iter().map(|v| v * v).sum();
    let scale = 1.0 / (fs * w_power * count as f64);
    let df = fs / segment_len as f64;
    let mut freqs = Vec::with_capacity(half);
    let mut vals = Vec::with_capacity(half);
    for (k, a) in acc.iter().enumerate().skip(1) {
        let one_sided = if k == half && segment_len % 2 == 0 { 1.0 } else { 2.0 };
        freqs.push(k as f64 * df);
        vals.push(a * scale * one_sided);
    }
    SpectrumSeries::new(freqs, vals, SpectrumKind::Psd, count)
}

/// Welch estimate with the segment length chosen to give at least `min_averages`
/// half-overlapped segments.
pub fn welch_with_averages(x: &TimeSeries, min_averages: usize) -> Result<SpectrumSeries> {
    let n = x.len();
    let mut seg = n.next_power_of_two();
    while seg >= 16 && (n.saturating_sub(seg)) / (seg / 2) + 1 < min_averages {
        seg /= 2;
    }
    welch_psd(x, seg.max(8), 0.5, Window::Hann)
}

/// Power spectrum of `exp(i phi)` where `phi` integrates the frequency
/// deviation (minus the reference's, when given). Frequencies are offsets from
/// the carrier; values sum to one.
pub fn beat_spectrum(freq_noise: &TimeSeries, reference: Option<&TimeSeries>, rbw: f64) -> Result<SpectrumSeries> {
    if freq_noise.unit() != Unit::HzDeviation {
        return Err(Error::arg("beat spectrum needs a frequency-deviation series"));
    }
    let fs = freq_noise.sample_rate();
    let duration = freq_noise.duration();
    if !(rbw >= 2.0 / duration) {
        return Err(Error::arg(format!(
            "resolution bandwidth {rbw} Hz is below 2/duration = {} Hz",
            2.0 / duration
        )));
    }
    if let Some(r) = reference {
        if r.len() != freq_noise.len() || (r.sample_rate() - fs).abs() > 1e-9 * fs {
            return Err(Error::arg("reference series must match length and sample rate"));
        }
    }
    let seg = (fs / rbw).round() as usize;
    if seg < 8 || seg > freq_noise.len() {
        return Err(Error::arg(format!(
            "resolution bandwidth {rbw} Hz gives unusable segment length {seg}"
        )));
    }
    let dt = 1.0 / fs;
    let mut phase = 0.0;
    let field: Vec<Complex64> = freq_noise
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &nu)| {
            let r = reference.map(|r| r.samples()[i]).unwrap_or(0.0);
            phase += 2.0 * PI * (nu - r) * dt;
            Complex64::from_polar(1.0, phase)
        })
        .collect();
    let w = hann(seg);
    let hop = seg / 2;
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let mut acc = vec![0.0; seg];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    let mut count = 0;
    let mut start = 0;
    while start + seg <= field.len() {
        for ((b, e), wi) in buf.iter_mut().zip(&field[start..start + seg]).zip(&w) {
            *b = e * wi;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let total: f64 = acc.iter().sum();
    let df = fs / seg as f64;
    // fftshift: negative offsets first
    let neg = seg / 2;
    let mut freqs = Vec::with_capacity(seg);
    let mut vals = Vec::with_capacity(seg);
    for j in 0..seg {
        let k = (j + seg - neg) % seg;
        let offset = if k >= seg - neg {
            k as f64 - seg as f64
        } else {
            k as f64
        };
        freqs.push(offset * df);
        vals.push(acc[k] / total);
    }
    SpectrumSeries::new(freqs, vals, SpectrumKind::BeatPower, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineshapeModel {
    Gaussian,
    Lorentzian,
}

impl LineshapeModel {
    pub fn name(&self) -> &'static str {
        match self {
            LineshapeModel::Gaussian => "gaussian",
            LineshapeModel::Lorentzian => "lorentzian",
        }
    }

    /// Model value in dB for peak level `a_db`, center `c`, full width `w`.
    fn db(&self, f: f64, a_db: f64, c: f64, w: f64) -> f64 {
        let x = (f - c) / w;
        match self {
            LineshapeModel::Gaussian => a_db - 10.0 / LN_10 * 4.0 * LN_2 * x * x,
            LineshapeModel::Lorentzian => a_db - 10.0 * (1.0 + 4.0 * x * x).log10(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineshapeFit {
    pub model: LineshapeModel,
    pub center: f64,
    pub fwhm: f64,
    /// Peak value of the fitted curve, linear units of the spectrum.
    pub amplitude: f64,
    /// RMS of the dB residual over the fit window.
    pub residual_rms: f64,
    pub points: usize,
    /// False for a best-so-far result from a fit that did not converge.
    pub valid: bool,
}

impl LineshapeFit {
    /// Key-value report: model, center_hz, fwhm_hz, residual_rms.
    pub fn report(&self) -> String {
        format!(
            "model = {}\ncenter_hz = {:e}\nfwhm_hz = {:e}\nresidual_rms = {:e}\nvalid = {}\n",
            self.model.name(),
            self.center,
            self.fwhm,
            self.residual_rms,
            self.valid
        )
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Full width of the contiguous region around the peak at or above half maximum.
fn half_max_width(f: &[f64], p: &[f64], peak: usize) -> f64 {
    let half = p[peak] / 2.0;
    let mut lo = peak;
    while lo > 0 && p[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < p.len() && p[hi + 1] >= half {
        hi += 1;
    }
    f[hi] - f[lo]
}

/// Outermost frequencies whose power reaches `level`.
fn envelope_span(f: &[f64], p: &[f64], level: f64) -> (f64, f64) {
    let first = p.iter().position(|&v| v >= level).unwrap_or(0);
    let last = p.iter().rposition(|&v| v >= level).unwrap_or(p.len() - 1);
    (f[first], f[last])
}

/// Bin-wise mean of spectra sharing one grid and kind.
pub fn average_spectra(spectra: &[SpectrumSeries]) -> Result<SpectrumSeries> {
    let Some(first) = spectra.first() else {
        return Err(Error::arg("nothing to average"));
    };
    let mut sum = vec![0.0; first.len()];
    let mut segments = 0;
    for s in spectra {
        if s.kind != first.kind || s.frequencies != first.frequencies {
            return Err(Error::arg("spectra to average must share kind and frequency grid"));
        }
        sum.iter_mut().zip(&s.values).for_each(|(a, v)| *a += v);
        segments += s.averaging;
    }
    let n = spectra.len() as f64;
    SpectrumSeries::new(
        first.frequencies.clone(),
        sum.into_iter().map(|v| v / n).collect(),
        first.kind,
        segments,
    )
}

/// Model-free full width at half maximum: the span between the outermost
/// half-maximum crossings, linearly interpolated. Matches the FWHM of smooth
/// single-peaked lines and tracks the full excursion of drifting ones.
pub fn measured_fwhm(spectrum: &SpectrumSeries) -> Result<f64> {
    let f = spectrum.frequencies();
    let p = spectrum.values();
    let p_max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(p_max > 0.0) {
        return Err(Error::NoPeak("spectrum has no positive power".into()));
    }
    let half = p_max / 2.0;
    let first = p.iter().position(|&v| v >= half).expect("maximum reaches half maximum");
    let last = p
        .iter()
        .rposition(|&v| v >= half)
        .expect("maximum reaches half maximum");
    let cross = |i: usize, j: usize| {
        // interpolate between bin i (below half) and bin j (above)
        let t = (half - p[i]) / (p[j] - p[i]);
        f[i] + t * (f[j] - f[i])
    };
    let lo = if first == 0 { f[0] } else { cross(first - 1, first) };
    let hi = if last + 1 == p.len() {
        f[last]
    } else {
        cross(last + 1, last)
    };
    Ok((hi - lo).max(spectrum.resolution()))
}

const MAX_FIT_ITERATIONS: usize = 200;

/// Least-squares fit of a Gaussian or Lorentzian to the dB power within
/// `window` Hz of the peak. With no window, the fit spans every bin from the
/// first to the last one within 10 dB of the peak, so ragged spectra are fit
/// by their envelope.
pub fn fit_lineshape(spectrum: &SpectrumSeries, model: LineshapeModel, window: Option<f64>) -> Result<LineshapeFit> {
    if spectrum.kind() != SpectrumKind::BeatPower {
        return Err(Error::arg("lineshape fits need a beat-power spectrum"));
    }
    let f = spectrum.frequencies();
    let p = spectrum.values();
    let (peak, &p_max) = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("spectrum is non-empty");
    let floor = median(p);
    if !(p_max > 3.0 * floor) {
        return Err(Error::NoPeak(format!(
            "peak {p_max:e} is not above 3x the median {floor:e}"
        )));
    }
    let df = spectrum.resolution();
    let (lo, hi) = match window {
        Some(w) => (f[peak] - w.max(3.0 * df), f[peak] + w.max(3.0 * df)),
        None => {
            let (lo, hi) = envelope_span(f, p, p_max / 10.0);
            let pad = 1.5 * df;
            (lo - pad, hi + pad)
        }
    };
    let est = match window {
        Some(_) => half_max_width(f, p, peak),
        None => (hi - lo) / 1.82,
    };
    let idx: Vec<usize> = (0..f.len())
        .filter(|&i| f[i] >= lo && f[i] <= hi && p[i] > 0.0)
        .collect();
    if idx.len() < 4 {
        return Err(Error::NoPeak("fit window holds fewer than four usable bins".into()));
    }
    let xs: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| 10.0 * p[i].log10()).collect();

    let residuals = |x: &[f64; 3]| -> Vec<f64> {
        xs.iter()
            .zip(&ys)
            .map(|(&fi, &yi)| model.db(fi, x[0], x[1], x[2]) - yi)
            .collect()
    };
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    let mut x = [
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        f[peak],
        est.max(df),
    ];
    let mut r = residuals(&x);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        // numeric Jacobian
        let steps = [
            1e-6 * x[0].abs().max(1.0),
            1e-6 * x[2].abs().max(df),
            1e-6 * x[2].abs().max(df),
        ];
        let mut jac = vec![[0.0; 3]; xs.len()];
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += steps[j];
            xm[j] -= steps[j];
            let rp = residuals(&xp);
            let rm = residuals(&xm);
            for i in 0..xs.len() {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * steps[j]);
            }
        }
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (row, ri) in jac.iter().zip(&r) {
            for a in 0..3 {
                jtr[a] += row[a] * ri;
                for b in 0..3 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-30);
            }
            let Some(delta) = solve3(m, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [x[0] + delta[0], x[1] + delta[1], x[2] + delta[2]];
            let rt = residuals(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let rel = (c - ct) / c.max(1e-300);
                let small_step = delta
                    .iter()
                    .zip(&trial)
                    .all(|(d, t)| d.abs() <= 1e-10 * t.abs().max(df));
                x = trial;
                r = rt;
                c = ct;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-12 || small_step {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // no downhill step left: at a minimum to working precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    let fit = LineshapeFit {
        model,
        center: x[1],
        fwhm: x[2].abs(),
        amplitude: 10f64.powf(x[0] / 10.0),
        residual_rms: (c / xs.len() as f64).sqrt(),
        points: xs.len(),
        valid: converged,
    };
    if converged {
        Ok(fit)
    } else {
        Err(Error::FitNotConverged {
            iterations,
            best: Box::new(fit),
        })
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let factor = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Linewidth from the beta-separation line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaLineEstimate {
    pub fwhm: f64,
    /// Integrated density above the separation line, Hz^2.
    pub area: f64,
    /// Set when the spectrum never crosses the line; `fwhm` is then
    /// `pi * median(S)`, the white-noise Lorentzian width.
    pub floor_only: bool,
}

/// `FWHM = sqrt(8 ln2 A)` where `A` integrates `S(f)` over the region above
/// `8 ln2 f / pi^2`, from `1 / obs_time` upward.
pub fn beta_line_linewidth(psd: &SpectrumSeries, obs_time: f64) -> Result<BetaLineEstimate> {
    if psd.kind() != SpectrumKind::Psd {
        return Err(Error::arg("beta-line estimate needs a PSD"));
    }
    if !(obs_time > 0.0) {
        return Err(Error::arg("observation time must be positive"));
    }
    let f_min = 1.0 / obs_time;
    let f = psd.frequencies();
    if f[0] > f_min * (1.0 + 1e-9) {
        return Err(Error::arg(format!(
            "PSD starts at {} Hz, above 1/obs_time = {f_min} Hz",
            f[0]
        )));
    }
    let s = psd.values();
    let line = |fi: f64| 8.0 * LN_2 * fi / (PI * PI);
    let masked: Vec<f64> = f
        .iter()
        .zip(s)
        .map(|(&fi, &si)| if fi >= f_min && si > line(fi) { si } else { 0.0 })
        .collect();
    let area: f64 = f
        .windows(2)
        .zip(masked.windows(2))
        .map(|(fw, mw)| 0.5 * (mw[0] + mw[1]) * (fw[1] - fw[0]))
        .sum();
    if area > 0.0 {
        Ok(BetaLineEstimate {
            fwhm: (8.0 * LN_2 * area).sqrt(),
            area,
            floor_only: false,
        })
    } else {
        let band: Vec<f64> = f
            .iter()
            .zip(s)
            .filter(|(fi, _)| **fi >= f_min)
            .map(|(_, si)| *si)
            .collect();
        Ok(BetaLineEstimate {
            fwhm: PI * median(&band),
            area: 0.0,
            floor_only: true,
        })
    }
}

/// Logarithmically spaced bands `[lo, hi)` covering `[f_lo, f_hi]`.
pub fn log_bands(f_lo: f64, f_hi: f64, per_decade: usize) -> Vec<(f64, f64)> {
    let n = (((f_hi / f_lo).log10() * per_decade as f64).ceil() as usize).max(1);
    let r = (f_hi / f_lo).powf(1.0 / n as f64);
    (0..n)
        .map(|i| (f_lo * r.powi(i as i32), f_lo * r.powi(i as i32 + 1)))
        .collect()
}

/// Anti-aliasing decimator: eighth-order Butterworth at a fifth of the
/// output rate, then every `factor`-th sample. Streaming.
#[derive(Debug, Clone)]
pub struct Decimator {
    factor: usize,
    filter: Option<DigitalFilter>,
    phase: usize,
}

impl Decimator {
    pub fn new(sample_rate: f64, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::arg("decimation factor must be at least 1"));
        }
        let filter = if factor > 1 {
            let out_rate = sample_rate / factor as f64;
            Some(discretize(
                &TransferFunction::butterworth(8, 0.2 * out_rate),
                sample_rate,
            )?)
        } else {
            None
        };
        Ok(Self {
            factor,
            filter,
            phase: 0,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Feeds one input sample; returns an output sample every `factor` inputs.
    #[inline]
    pub fn push(&mut self, x: f64) -> Option<f64> {
        let y = match &mut self.filter {
            Some(f) => f.step(x),
            None => x,
        };
        self.phase += 1;
        if self.phase == self.factor {
            self.phase = 0;
            Some(y)
        } else {
            None
        }
    }
}

pub fn decimate(x: &TimeSeries, factor: usize) -> Result<TimeSeries> {
    let mut d = Decimator::new(x.sample_rate(), factor)?;
    let out: Vec<f64> = x.samples().iter().filter_map(|&v| d.push(v)).collect();
    TimeSeries::new(x.sample_rate() / factor as f64, out, x.unit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_spectrum(fwhm: f64, df: f64, n: usize) -> SpectrumSeries {
        let freqs: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * df).collect();
        let vals = freqs
            .iter()
            .map(|f| (-4.0 * LN_2 * f * f / (fwhm * fwhm)).exp() + 1e-9)
            .collect();
        SpectrumSeries::new(freqs, vals, SpectrumKind::BeatPower, 1).unwrap()
    }

    fn lorentzian_spectrum(fwhm: f64, df: f64, n: usize) -> SpectrumSeries {
        let freqs: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * df).collect();
        let vals = freqs
            .iter()
            .map(|f| 1.0 / (1.0 + 4.0 * f * f / (fwhm * fwhm)))
            .collect();
        SpectrumSeries::new(freqs, vals, SpectrumKind::BeatPower, 1).unwrap()
    }

    #[test]
    fn gaussian_self_consistency() {
        let s = gaussian_spectrum(5e4, 500.0, 2048);
        let fit = fit_lineshape(&s, LineshapeModel::Gaussian, None).unwrap();
        assert!((fit.fwhm / 5e4 - 1.0).abs() < 0.01, "{}", fit.fwhm);
        assert!(fit.center.abs() < 50.0);
    }

    #[test]
    fn lorentzian_identified() {
        let s = lorentzian_spectrum(3e4, 300.0, 4096);
        let l = fit_lineshape(&s, LineshapeModel::Lorentzian, Some(1e5)).unwrap();
        let g = fit_lineshape(&s, LineshapeModel::Gaussian, Some(1e5)).unwrap();
        assert!(l.residual_rms < g.residual_rms);
        assert!((l.fwhm / 3e4 - 1.0).abs() < 0.01);
    }

    #[test]
    fn flat_spectrum_has_no_peak() {
        let freqs: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let s = SpectrumSeries::new(freqs, vec![1.0; 64], SpectrumKind::BeatPower, 1).unwrap();
        assert!(matches!(
            fit_lineshape(&s, LineshapeModel::Gaussian, None),
            Err(Error::NoPeak(_))
        ));
    }

    #[test]
    fn zero_series_zero_spectrum() {
        let ts = TimeSeries::new(1e3, vec![0.0; 1024], Unit::HzDeviation).unwrap();
        let s = welch_psd(&ts, 128, 0.5, Window::Hann).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert!(welch_psd(&ts, 4, 0.5, Window::Hann).is_err());
    }

    #[test]
    fn sine_power_recovered() {
        let fs = 1e4;
        let a = 3.0;
        let f0 = 1234.5;
        let x: Vec<f64> = (0..1 << 16)
            .map(|i| a * (2.0 * PI * f0 * i as f64 / fs).sin())
            .collect();
        let ts = TimeSeries::new(fs, x, Unit::Volts).unwrap();
        let s = welch_psd(&ts, 4096, 0.5, Window::Hann).unwrap();
        let df = s.resolution();
        let (mean, n) = s.band_average(f0 - 10.0 * df, f0 + 10.0 * df).unwrap();
        let power = mean * n as f64 * df;
        assert!((power / (a * a / 2.0) - 1.0).abs() < 0.03, "{power}");
    }

    #[test]
    fn zero_noise_beat_is_resolution_limited() {
        let ts = TimeSeries::new(1e6, vec![0.0; 1 << 16], Unit::HzDeviation).unwrap();
        let s = beat_spectrum(&ts, None, 1e3).unwrap();
        let total: f64 = s.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Hann main lobe: center bin and its two neighbours
        let i0 = s.frequencies().iter().position(|&f| f == 0.0).unwrap();
        let core: f64 = s.values()[i0 - 1..=i0 + 1].iter().sum();
        assert!(core > 0.99, "{core}");
        assert!(beat_spectrum(&ts, None, 10.0).is_err());
    }

    #[test]
    fn beat_offsets_track_a_constant_frequency() {
        let ts = TimeSeries::new(1e6, vec![2e4; 1 << 15], Unit::HzDeviation).unwrap();
        let s = beat_spectrum(&ts, None, 1e3).unwrap();
        let (i, _) = s.values().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((s.frequencies()[i] - 2e4).abs() <= s.resolution());
        // subtracting an identical reference collapses the offset
        let s = beat_spectrum(&ts, Some(&ts), 1e3).unwrap();
        let i0 = s.frequencies().iter().position(|&f| f == 0.0).unwrap();
        assert!(s.values()[i0] > 0.6);
    }

    #[test]
    fn beta_line_white_is_floor_only() {
        let model = crate::noise::PsdModel::white(10.0);
        // line passes 10 Hz^2/Hz at ~17.8 Hz; observe for 10 ms so only f >= 100 Hz counts
        let s = SpectrumSeries::from_psd(&model, 100.0, 1e6, 500).unwrap();
        let est = beta_line_linewidth(&s, 0.01).unwrap();
        assert!(est.floor_only);
        assert!((est.fwhm - PI * 10.0).abs() < 1e-9);
    }

    #[test]
    fn beta_line_matches_hand_integral() {
        // S = h/f crosses the line at f* = sqrt(h pi^2 / (8 ln2)); A = h ln(f*/f_min)
        let h = 1e8;
        let model = crate::noise::FnPsd(move |f: f64| h / f);
        let s = SpectrumSeries::from_psd(&model, 1.0, 1e6, 200_000).unwrap();
        let est = beta_line_linewidth(&s, 1.0).unwrap();
        let f_star = (h * PI * PI / (8.0 * LN_2)).sqrt();
        let area = h * f_star.ln();
        assert!((est.area / area - 1.0).abs() < 1e-3, "{} vs {area}", est.area);
        assert!(beta_line_linewidth(&s, 10.0).is_err());
    }

    #[test]
    fn decimator_keeps_in_band_tone() {
        let fs = 1e6;
        let x: Vec<f64> = (0..1 << 16).map(|i| (2.0 * PI * 1e4 * i as f64 / fs).sin()).collect();
        let ts = TimeSeries::new(fs, x, Unit::Volts).unwrap();
        let d = decimate(&ts, 5).unwrap();
        assert_eq!(d.sample_rate(), 2e5);
        let tail = d.tail_from(0.01).unwrap();
        assert!((tail.rms() - 0.5f64.sqrt()).abs() < 0.01);
    }

    #[test]
    fn log_bands_tile_the_range() {
        let b = log_bands(10.0, 1e5, 10);
        assert_eq!(b.len(), 40);
        assert!((b[0].0 - 10.0).abs() < 1e-12 && (b.last().unwrap().1 - 1e5).abs() < 1e-6);
        assert!(b.windows(2).all(|w| (w[0].1 - w[1].0).abs() < 1e-9 * w[1].0));
    }
}
