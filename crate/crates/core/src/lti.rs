//! Continuous-time transfer functions, their bilinear discretization, streaming
//! biquad filters and a time-domain PID controller.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

const TAU: f64 = 2.0 * PI;

/// `gain * prod(s - z) / prod(s - p) * exp(-s * delay)`, frequencies in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub gain: f64,
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub delay: f64,
}

impl TransferFunction {
    pub fn new(gain: f64, zeros: Vec<Complex64>, poles: Vec<Complex64>, delay: f64) -> Result<Self> {
        let tf = Self {
            gain,
            zeros,
            poles,
            delay,
        };
        tf.validate()?;
        Ok(tf)
    }

    pub fn constant(gain: f64) -> Self {
        Self {
            gain,
            zeros: Vec::new(),
            poles: Vec::new(),
            delay: 0.0,
        }
    }

    /// Unity-DC-gain one-pole low-pass with corner `f_c` Hz.
    pub fn low_pass(f_c: f64) -> Self {
        let w = TAU * f_c;
        Self {
            gain: w,
            zeros: Vec::new(),
            poles: vec![Complex64::new(-w, 0.0)],
            delay: 0.0,
        }
    }

    /// `ki / s`.
    pub fn integrator(ki: f64) -> Self {
        Self {
            gain: ki,
            zeros: Vec::new(),
            poles: vec![Complex64::new(0.0, 0.0)],
            delay: 0.0,
        }
    }

    pub fn pure_delay(delay: f64) -> Self {
        Self {
            delay,
            ..Self::constant(1.0)
        }
    }

    /// Butterworth low-pass of the given order, unity DC gain.
    pub fn butterworth(order: usize, f_c: f64) -> Self {
        let w = TAU * f_c;
        let poles = (0..order)
            .map(|k| {
                let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
                Complex64::from_polar(w, theta)
            })
            .collect();
        Self {
            gain: w.powi(order as i32),
            zeros: Vec::new(),
            poles,
            delay: 0.0,
        }
    }

    /// Cascade (product) of two transfer functions.
    pub fn series(&self, other: &TransferFunction) -> TransferFunction {
        let mut zeros = self.zeros.clone();
        zeros.extend_from_slice(&other.zeros);
        let mut poles = self.poles.clone();
        poles.extend_from_slice(&other.poles);
        TransferFunction {
            gain: self.gain * other.gain,
            zeros,
            poles,
            delay: self.delay + other.delay,
        }
    }

    pub fn scaled(&self, factor: f64) -> TransferFunction {
        TransferFunction {
            gain: self.gain * factor,
            ..self.clone()
        }
    }

    pub fn with_delay(&self, delay: f64) -> TransferFunction {
        TransferFunction { delay, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gain.is_finite() {
            return Err(Error::arg("transfer-function gain must be finite"));
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::arg(format!("delay must be >= 0, got {}", self.delay)));
        }
        for (what, roots) in [("zeros", &self.zeros), ("poles", &self.poles)] {
            if !conjugate_closed(roots) {
                return Err(Error::arg(format!("complex {what} must come in conjugate pairs")));
            }
        }
        Ok(())
    }

    pub fn is_proper(&self) -> bool {
        self.zeros.len() <= self.poles.len()
    }

    /// Poles strictly in the left half plane, or at the origin.
    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|p| p.re < 0.0 || (p.re == 0.0 && p.im == 0.0))
    }

    /// Complex response at `s`.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        let num: Complex64 = self.zeros.iter().map(|z| s - z).product();
        let den: Complex64 = self.poles.iter().map(|p| s - p).product();
        self.gain * num / den * (-s * self.delay).exp()
    }

    /// Complex response at `f` Hz.
    pub fn response(&self, f: f64) -> Complex64 {
        self.eval(Complex64::new(0.0, TAU * f))
    }

    /// Phase accumulated factor by factor, so cascades add exactly.
    fn phase(&self, f: f64) -> f64 {
        let s = Complex64::new(0.0, TAU * f);
        let mut phase = if self.gain < 0.0 { PI } else { 0.0 };
        for z in &self.zeros {
            phase += (s - z).arg();
        }
        for p in &self.poles {
            phase -= (s - p).arg();
        }
        phase - TAU * f * self.delay
    }

    /// Largest pole or zero corner in Hz.
    pub fn max_corner_hz(&self) -> f64 {
        self.zeros
            .iter()
            .chain(&self.poles)
            .map(|r| r.norm() / TAU)
            .fold(0.0, f64::max)
    }
}

fn conjugate_closed(roots: &[Complex64]) -> bool {
    let tol = |r: &Complex64| 1e-9 * r.norm().max(1.0);
    roots.iter().all(|r| {
        r.im == 0.0
            || roots
                .iter()
                .any(|q| (q.re - r.re).abs() <= tol(r) && (q.im + r.im).abs() <= tol(r))
    })
}

/// Magnitude and phase (radians) of `tf` at `f` Hz, including delay phase.
pub fn bode(tf: &TransferFunction, f: f64) -> Result<(f64, f64)> {
    if !(f > 0.0) {
        return Err(Error::Domain(format!("bode evaluated at non-positive frequency {f}")));
    }
    Ok((tf.response(f).norm(), tf.phase(f)))
}

/// `|1 / (1 + G)|` at `f` Hz.
pub fn closed_loop_suppression(open_loop: &TransferFunction, f: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::Domain(format!(
            "suppression evaluated at non-positive frequency {f}"
        )));
    }
    let g = open_loop.response(f);
    let denom = (Complex64::new(1.0, 0.0) + g).norm();
    if denom <= 1e-12 * g.norm().max(1.0) {
        return Err(Error::Singular { f_hz: f });
    }
    Ok(1.0 / denom)
}

/// First frequency in `[f_lo, f_hi]` where `|G|` falls through 1.
pub fn unity_gain_frequency(tf: &TransferFunction, f_lo: f64, f_hi: f64) -> Option<f64> {
    let n = 2000;
    let ratio = (f_hi / f_lo).powf(1.0 / n as f64);
    let mag = |f: f64| tf.response(f).norm();
    let mut prev = f_lo;
    if mag(prev) < 1.0 {
        return None;
    }
    for i in 1..=n {
        let f = f_lo * ratio.powi(i);
        if mag(f) < 1.0 {
            let (mut a, mut b) = (prev, f);
            for _ in 0..60 {
                let m = (a * b).sqrt();
                if mag(m) >= 1.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some((a * b).sqrt());
        }
        prev = f;
    }
    None
}

/// Phase margin in degrees at the unity-gain frequency.
pub fn phase_margin_deg(tf: &TransferFunction, ugf: f64) -> f64 {
    180.0 + tf.phase(ugf).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidConfig {
    #[serde(default)]
    pub kp: f64,
    #[serde(default, rename = "ki_per_s")]
    pub ki: f64,
    #[serde(default, rename = "kd_s")]
    pub kd: f64,
    #[serde(default = "default_rolloff", rename = "derivative_rolloff_hz")]
    pub derivative_rolloff: f64,
    #[serde(rename = "output_low_pass_hz")]
    pub output_low_pass: f64,
    /// Symmetric output limit.
    #[serde(rename = "saturation_v")]
    pub saturation: f64,
}

fn default_rolloff() -> f64 {
    1e6
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kp == 0.0 && self.ki == 0.0 && self.kd == 0.0 {
            return Err(Error::arg("PID needs at least one non-zero gain"));
        }
        if ![self.kp, self.ki, self.kd].iter().all(|g| g.is_finite()) {
            return Err(Error::arg("PID gains must be finite"));
        }
        if !(self.output_low_pass > 0.0) {
            return Err(Error::arg("PID output low-pass must be positive"));
        }
        if self.kd != 0.0 && !(self.derivative_rolloff > 0.0 && self.derivative_rolloff.is_finite()) {
            return Err(Error::arg("derivative path needs a finite positive rolloff"));
        }
        if !(self.saturation > 0.0) {
            return Err(Error::arg("PID saturation limit must be positive"));
        }
        Ok(())
    }
}

/// Ascending-power polynomial product.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, x) in b.iter().enumerate() {
        out[i] += x;
    }
    out
}

/// Roots of a polynomial of degree at most two, plus its leading coefficient.
fn small_poly_roots(mut c: Vec<f64>) -> (Vec<Complex64>, f64) {
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    match c.len() {
        1 => (Vec::new(), c[0]),
        2 => (vec![Complex64::new(-c[0] / c[1], 0.0)], c[1]),
        3 => {
            let (a, b, cc) = (c[2], c[1], c[0]);
            let disc = b * b - 4.0 * a * cc;
            let roots = if disc >= 0.0 {
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                let r1 = if q != 0.0 { cc / q } else { 0.0 };
                let r2 = q / a;
                vec![Complex64::new(r2, 0.0), Complex64::new(r1, 0.0)]
            } else {
                let re = -b / (2.0 * a);
                let im = (-disc).sqrt() / (2.0 * a);
                vec![Complex64::new(re, im), Complex64::new(re, -im)]
            };
            (roots, a)
        }
        _ => unreachable!("PID numerator degree exceeds two"),
    }
}

/// `kp + ki/s + kd*s/(1 + s/w_d)` followed by the output low-pass.
pub fn make_pid(config: &PidConfig) -> Result<TransferFunction> {
    config.validate()?;
    let wd = TAU * config.derivative_rolloff;
    let has_i = config.ki != 0.0;
    let has_d = config.kd != 0.0;
    let s_factor: &[f64] = if has_i { &[0.0, 1.0] } else { &[1.0] };
    let d_factor: Vec<f64> = if has_d { vec![1.0, 1.0 / wd] } else { vec![1.0] };
    let den = poly_mul(s_factor, &d_factor);

    let mut num = den.iter().map(|c| c * config.kp).collect::<Vec<_>>();
    if has_i {
        num = poly_add(&num, &d_factor.iter().map(|c| c * config.ki).collect::<Vec<_>>());
    }
    if has_d {
        let s_times = poly_mul(s_factor, &[0.0, config.kd]);
        num = poly_add(&num, &s_times);
    }
    let (zeros, num_lead) = small_poly_roots(num);
    let (poles, den_lead) = small_poly_roots(den);
    let core = TransferFunction {
        gain: num_lead / den_lead,
        zeros,
        poles,
        delay: 0.0,
    };
    Ok(core.series(&TransferFunction::low_pass(config.output_low_pass)))
}

/// Actuator: gain (output units per volt), one-pole bandwidth and dead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorConfig {
    pub gain_hz_per_v: f64,
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub delay_s: f64,
}

impl ActuatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_hz_per_v > 0.0 && self.gain_hz_per_v.is_finite()) {
            return Err(Error::config("actuator gain must be positive"));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::config("actuator bandwidth must be positive"));
        }
        if !(self.delay_s >= 0.0 && self.delay_s.is_finite()) {
            return Err(Error::config("actuator delay must be >= 0"));
        }
        Ok(())
    }

    pub fn transfer_function(&self) -> TransferFunction {
        TransferFunction::low_pass(self.bandwidth_hz)
            .scaled(self.gain_hz_per_v)
            .with_delay(self.delay_s)
    }
}

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(b: [f64; 3], a: [f64; 2]) -> Self {
        Self { b, a, s1: 0.0, s2: 0.0 }
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }

    /// Discrete poles (roots of `z^2 + a1 z + a2`).
    pub fn poles(&self) -> Vec<Complex64> {
        let (a1, a2) = (self.a[0], self.a[1]);
        if a2 == 0.0 {
            return vec![Complex64::new(-a1, 0.0)];
        }
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        vec![(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    /// Bilinear image of `prod(s - z) / prod(s - p)` with one or two poles,
    /// using `s = k (1 - q) / (1 + q)` where `q = 1/z`.
    fn bilinear(zeros: &[Complex64], poles: &[Complex64], k: f64) -> Biquad {
        let order = poles.len();
        debug_assert!(order >= 1 && order <= 2 && zeros.len() <= order);
        let factor = |r: Complex64| [Complex64::new(k, 0.0) - r, -(Complex64::new(k, 0.0) + r)];
        let mul = |a: &[Complex64], b: &[Complex64; 2]| {
            let mut out = vec![Complex64::new(0.0, 0.0); a.len() + 1];
            for (i, x) in a.iter().enumerate() {
                out[i] += x * b[0];
                out[i + 1] += x * b[1];
            }
            out
        };
        let one_plus_q = [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        let mut num = vec![Complex64::new(1.0, 0.0)];
        for z in zeros {
            num = mul(&num, &factor(*z));
        }
        for _ in zeros.len()..order {
            num = mul(&num, &one_plus_q);
        }
        let mut den = vec![Complex64::new(1.0, 0.0)];
        for p in poles {
            den = mul(&den, &factor(*p));
        }
        let a0 = den[0].re;
        let get = |v: &Vec<Complex64>, i: usize| v.get(i).map(|c| c.re / a0).unwrap_or(0.0);
        Biquad::new([get(&num, 0), get(&num, 1), get(&num, 2)], [get(&den, 1), get(&den, 2)])
    }
}

/// Integer-sample delay line.
#[derive(Debug, Clone, PartialEq)]
struct DelayLine {
    buf: Vec<f64>,
    pos: usize,
}

impl DelayLine {
    fn new(samples: usize) -> Self {
        Self {
            buf: vec![0.0; samples],
            pos: 0,
        }
    }

    #[inline]
    fn step(&mut self, x: f64) -> f64 {
        if self.buf.is_empty() {
            return x;
        }
        let y = self.buf[self.pos];
        self.buf[self.pos] = x;
        self.pos += 1;
        if self.pos == self.buf.len() {
            self.pos = 0;
        }
        y
    }

    fn reset(&mut self) {
        self.buf.iter_mut().for_each(|x| *x = 0.0);
        self.pos = 0;
    }
}

/// Streaming cascade of biquads with an overall gain and integer delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalFilter {
    sample_rate: f64,
    gain: f64,
    sections: Vec<Biquad>,
    delay: DelayLine,
    undersampled: bool,
}

impl DigitalFilter {
    pub fn from_sections(sample_rate: f64, gain: f64, sections: Vec<Biquad>, delay_samples: usize) -> Self {
        Self {
            sample_rate,
            gain,
            sections,
            delay: DelayLine::new(delay_samples),
            undersampled: false,
        }
    }

    /// Pass-through filter.
    pub fn identity(sample_rate: f64) -> Self {
        Self::from_sections(sample_rate, 1.0, Vec::new(), 0)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn delay_samples(&self) -> usize {
        self.delay.buf.len()
    }

    /// Set when the sample rate is below four times the largest corner of the prototype.
    pub fn undersampled(&self) -> bool {
        self.undersampled
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        let mut y = self.gain * x;
        for s in &mut self.sections {
            y = s.step(y);
        }
        self.delay.step(y)
    }

    pub fn process(&mut self, data: &mut [f64]) {
        for x in data {
            *x = self.step(*x);
        }
    }

    pub fn reset(&mut self) {
        self.sections.iter_mut().for_each(Biquad::reset);
        self.delay.reset();
    }

    /// Frequency response at `f` Hz.
    pub fn response(&self, f: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -TAU * f / self.sample_rate);
        let mut h = Complex64::new(self.gain, 0.0);
        for s in &self.sections {
            h *= s.response(z_inv);
        }
        h * z_inv.powu(self.delay_samples() as u32)
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.poles().iter().all(|p| p.norm() < 1.0 - 1e-12))
    }
}

/// Bilinear discretization, each section prewarped at its own corner
/// (capped at `sample_rate / 8`). Poles at the origin map to `z = 1`.
pub fn discretize(tf: &TransferFunction, sample_rate: f64) -> Result<DigitalFilter> {
    tf.validate()?;
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::arg(format!("sample rate must be positive, got {sample_rate}")));
    }
    if !tf.is_proper() {
        return Err(Error::arg(format!(
            "improper transfer function ({} zeros, {} poles) cannot be discretized",
            tf.zeros.len(),
            tf.poles.len()
        )));
    }
    if !tf.is_stable() {
        let bad: Vec<String> = tf
            .poles
            .iter()
            .filter(|p| !(p.re < 0.0 || (p.re == 0.0 && p.im == 0.0)))
            .map(|p| format!("{:.4e}{:+.4e}j rad/s", p.re, p.im))
            .collect();
        return Err(Error::UnstableTransferFunction(format!(
            "poles outside the open left half plane: {}",
            bad.join(", ")
        )));
    }

    let (pole_groups, zero_groups) = group_sections(tf)?;
    let warp_cap = TAU * sample_rate / 8.0;
    let mut sections = Vec::with_capacity(pole_groups.len());
    for (poles, zeros) in pole_groups.iter().zip(&zero_groups) {
        let corner = poles.iter().chain(zeros.iter()).map(|r| r.norm()).fold(0.0, f64::max);
        let w = corner.min(warp_cap);
        let k = if w > 0.0 {
            w / (w / (2.0 * sample_rate)).tan()
        } else {
            2.0 * sample_rate
        };
        sections.push(Biquad::bilinear(zeros, poles, k));
    }
    let delay_samples = (tf.delay * sample_rate).round() as usize;
    let mut filter = DigitalFilter::from_sections(sample_rate, tf.gain, sections, delay_samples);
    filter.undersampled = sample_rate < 4.0 * tf.max_corner_hz();
    Ok(filter)
}

type Groups = (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>);

/// Splits poles into first-order (real) and second-order (conjugate pair)
/// sections and hands each section at most as many zeros as poles.
fn group_sections(tf: &TransferFunction) -> Result<Groups> {
    let upper = |roots: &[Complex64]| -> (Vec<Complex64>, Vec<Complex64>) {
        let real = roots.iter().filter(|r| r.im == 0.0).copied().collect();
        let pairs = roots.iter().filter(|r| r.im > 0.0).copied().collect();
        (real, pairs)
    };
    let (mut real_p, pair_p) = upper(&tf.poles);
    let (mut real_z, mut pair_z) = upper(&tf.zeros);
    real_p.sort_by(|a, b| a.re.total_cmp(&b.re));

    let mut poles: Vec<Vec<Complex64>> = pair_p.iter().map(|p| vec![*p, p.conj()]).collect();
    let mut zeros: Vec<Vec<Complex64>> = vec![Vec::new(); poles.len()];
    // complex zero pairs need a second-order section
    for slot in zeros.iter_mut() {
        if let Some(z) = pair_z.pop() {
            *slot = vec![z, z.conj()];
        }
    }
    while let Some(z) = pair_z.pop() {
        if real_p.len() < 2 {
            return Err(Error::arg("complex zero pair has no section to live in"));
        }
        let a = real_p.remove(0);
        let b = real_p.remove(0);
        poles.push(vec![a, b]);
        zeros.push(vec![z, z.conj()]);
    }
    for p in real_p {
        poles.push(vec![p]);
        zeros.push(Vec::new());
    }
    // real zeros go to the section with spare capacity whose corner is closest
    real_z.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    for z in real_z {
        let best = (0..poles.len())
            .filter(|&i| zeros[i].len() < poles[i].len())
            .min_by(|&i, &j| {
                let d = |k: usize| (poles[k][0].norm().max(1e-30).ln() - z.norm().max(1e-30).ln()).abs();
                d(i).total_cmp(&d(j))
            });
        match best {
            Some(i) => zeros[i].push(z),
            None => return Err(Error::arg("more zeros than poles")),
        }
    }
    Ok((poles, zeros))
}

/// Runs `x` through `filter`, continuing from the filter's current state.
pub fn filter_apply(filter: &mut DigitalFilter, x: &TimeSeries) -> Result<TimeSeries> {
    if (x.sample_rate() - filter.sample_rate()).abs() > 1e-9 * filter.sample_rate() {
        return Err(Error::arg(format!(
            "series sampled at {} Hz but filter runs at {} Hz",
            x.sample_rate(),
            filter.sample_rate()
        )));
    }
    let mut out = x.samples().to_vec();
    filter.process(&mut out);
    TimeSeries::new(x.sample_rate(), out, x.unit())
}

/// Time-domain PID with trapezoidal integrator, filtered derivative, output
/// low-pass and symmetric saturation. The integrator freezes while the output
/// is saturated and the error would drive it further.
#[derive(Debug, Clone)]
pub struct PidController {
    config: PidConfig,
    sample_rate: f64,
    integral: f64,
    prev_error: f64,
    derivative: Option<Biquad>,
    output_lp: Biquad,
    saturated: bool,
    saturation_events: usize,
}

impl PidController {
    pub fn new(config: PidConfig, sample_rate: f64) -> Result<Self> {
        config.validate()?;
        let derivative = if config.kd != 0.0 {
            let wd = TAU * config.derivative_rolloff;
            // kd * s / (1 + s/wd) = kd*wd * s / (s + wd)
            let f = discretize(
                &TransferFunction {
                    gain: config.kd * wd,
                    zeros: vec![Complex64::new(0.0, 0.0)],
                    poles: vec![Complex64::new(-wd, 0.0)],
                    delay: 0.0,
                },
                sample_rate,
            )?;
            let mut b = f.sections[0].clone();
            b.b.iter_mut().for_each(|c| *c *= f.gain);
            Some(b)
        } else {
            None
        };
        let lp = discretize(&TransferFunction::low_pass(config.output_low_pass), sample_rate)?;
        let mut output_lp = lp.sections[0].clone();
        output_lp.b.iter_mut().for_each(|c| *c *= lp.gain);
        Ok(Self {
            config,
            sample_rate,
            integral: 0.0,
            prev_error: 0.0,
            derivative,
            output_lp,
            saturated: false,
            saturation_events: 0,
        })
    }

    pub fn config(&self) -> &PidConfig {
        &self.config
    }

    pub fn saturation_events(&self) -> usize {
        self.saturation_events
    }

    #[inline]
    pub fn step(&mut self, error: f64) -> f64 {
        let c = &self.config;
        let candidate = self.integral + c.ki * (error + self.prev_error) / (2.0 * self.sample_rate);
        self.prev_error = error;
        let d = match &mut self.derivative {
            Some(b) => b.step(error),
            None => 0.0,
        };
        let raw = self.output_lp.step(c.kp * error + candidate + d);
        let limit = c.saturation;
        let out = raw.clamp(-limit, limit);
        let clipped = out != raw;
        if clipped && !self.saturated {
            self.saturation_events += 1;
        }
        self.saturated = clipped;
        if !(clipped && (candidate - self.integral) * raw > 0.0) {
            self.integral = candidate;
        }
        out
    }

    /// Small-signal response at `f` Hz of the discrete controller.
    pub fn response(&self, f: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -TAU * f / self.sample_rate);
        let c = &self.config;
        let integ = c.ki / (2.0 * self.sample_rate) * (1.0 + z_inv) / (1.0 - z_inv);
        let d = self.derivative.as_ref().map(|b| b.response(z_inv)).unwrap_or_default();
        (c.kp + integ + d) * self.output_lp.response(z_inv)
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = 0.0;
        if let Some(b) = &mut self.derivative {
            b.reset();
        }
        self.output_lp.reset();
        self.saturated = false;
    }
}
