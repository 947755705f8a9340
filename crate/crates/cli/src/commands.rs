use std::collections::BTreeMap;
use std::fmt::Write as _;

use lockloop_core::cascade::{beat_ensemble, simulate, AnalyticModel, Channel, LockConfig, Scenario};
use lockloop_core::config::Config;
use lockloop_core::lti::{bode, closed_loop_suppression, TransferFunction};
use lockloop_core::pdh::pdh_error_curve;
use lockloop_core::readout::{eit_transmission, run_fig3_comparison, ReadoutOptions};
use lockloop_core::sas::{sas_error, sas_transmission};
use lockloop_core::spectral::{
    beta_line_linewidth, fit_lineshape, measured_fwhm, welch_with_averages, LineshapeFit, LineshapeModel,
    SpectrumSeries,
};
use lockloop_core::Error as CoreError;

use crate::error::CliError;
use crate::output::{csv, OutputDir};

pub const DEFAULT_BEAT_LOCKS: [LockConfig; 4] = [
    LockConfig::FreeRun,
    LockConfig::SasOnly,
    LockConfig::LcOnly,
    LockConfig::Cascade,
];

pub fn psd(
    cfg: &Config,
    lock: LockConfig,
    channel: Channel,
    series: bool,
    out: &mut OutputDir,
) -> Result<(), CliError> {
    let scenario = cfg.scenario().with_lock(lock);
    let run = simulate(&scenario)?;
    let x = run.settled(channel)?;
    let psd = welch_with_averages(&x, cfg.analysis.min_averages)?;
    let model = AnalyticModel::new(&scenario, true)?;
    let analytic: Vec<f64> = psd
        .frequencies()
        .iter()
        .map(|&f| model.channel_psd(channel, f))
        .collect::<Result<_, _>>()?;
    let stem = format!("{}_{}", channel_name(channel), lock);
    out.write(
        &format!("psd_{stem}.csv"),
        &csv("f_hz,psd_hz2_per_hz", &[psd.frequencies(), psd.values()]),
    )?;
    out.write(
        &format!("psd_{stem}_analytic.csv"),
        &csv("f_hz,psd_hz2_per_hz", &[psd.frequencies(), &analytic]),
    )?;
    if series {
        let t: Vec<f64> = (0..x.len()).map(|i| run.settle_s + i as f64 * x.dt()).collect();
        out.write(&format!("series_{stem}.csv"), &csv("t_s,freq_hz", &[&t, x.samples()]))?;
    }
    println!(
        "{lock}: {} rms {:.4e} Hz, {} Welch averages, resolution {:.3} Hz, saturation events {}",
        channel_name(channel),
        x.rms(),
        psd.averaging(),
        psd.resolution(),
        run.saturation_events
    );
    Ok(())
}

pub fn channel_name(c: Channel) -> &'static str {
    match c {
        Channel::Absolute => "absolute",
        Channel::Relative => "relative",
        Channel::Cavity => "cavity",
        Channel::Error => "error",
    }
}

/// Fits, model-free width and beta-line estimate of one beat curve.
pub struct BeatReport {
    pub lock: LockConfig,
    pub gaussian: Result<LineshapeFit, CoreError>,
    pub lorentzian: Result<LineshapeFit, CoreError>,
    pub measured_fwhm: f64,
    pub beta_line_fwhm: Option<f64>,
}

impl BeatReport {
    /// The converged fit with the lower log-power residual.
    pub fn preferred(&self) -> Option<&LineshapeFit> {
        match (&self.gaussian, &self.lorentzian) {
            (Ok(g), Ok(l)) => Some(if g.residual_rms <= l.residual_rms { g } else { l }),
            (Ok(g), Err(_)) => Some(g),
            (Err(_), Ok(l)) => Some(l),
            _ => None,
        }
    }

    pub fn text(&self, realizations: usize, rbw: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[{}]", self.lock);
        match self.preferred() {
            Some(fit) => {
                let _ = writeln!(s, "preferred = {}", fit.model.name());
                let _ = writeln!(s, "fwhm_hz = {:e}", fit.fwhm);
            }
            None => {
                let _ = writeln!(s, "preferred = none");
            }
        }
        let _ = writeln!(s, "measured_fwhm_hz = {:e}", self.measured_fwhm);
        if let Some(b) = self.beta_line_fwhm {
            let _ = writeln!(s, "beta_line_fwhm_hz = {b:e}");
        }
        let _ = writeln!(s, "realizations = {realizations}");
        let _ = writeln!(s, "rbw_hz = {rbw:e}");
        for (name, fit) in [("gaussian", &self.gaussian), ("lorentzian", &self.lorentzian)] {
            let _ = writeln!(s, "\n[{}.{name}]", self.lock);
            match fit {
                Ok(f) => s.push_str(&f.report()),
                Err(CoreError::FitNotConverged { best, .. }) => {
                    s.push_str(&best.report());
                    let _ = writeln!(s, "error = \"did not converge\"");
                }
                Err(e) => {
                    let _ = writeln!(s, "valid = false\nerror = \"{e}\"");
                }
            }
        }
        s
    }

    fn failed(&self) -> bool {
        self.gaussian.is_err() || self.lorentzian.is_err()
    }
}

pub fn analyze_beat(
    lock: LockConfig,
    spectrum: &SpectrumSeries,
    scenario: &Scenario,
    window: Option<f64>,
) -> Result<BeatReport, CliError> {
    let gaussian = fit_lineshape(spectrum, LineshapeModel::Gaussian, window);
    let lorentzian = fit_lineshape(spectrum, LineshapeModel::Lorentzian, window);
    let obs = scenario.timing.duration_s - scenario.timing.settle_s;
    let model = AnalyticModel::new(&scenario.with_lock(lock), true)?;
    let nyquist = scenario.rates.record_hz() / 2.0;
    let beta = SpectrumSeries::from_psd(&model.psd(Channel::Absolute), 1.0 / obs, nyquist, 4000)
        .and_then(|s| beta_line_linewidth(&s, obs))
        .ok()
        .map(|b| b.fwhm);
    Ok(BeatReport {
        lock,
        gaussian,
        lorentzian,
        measured_fwhm: measured_fwhm(spectrum)?,
        beta_line_fwhm: beta,
    })
}

/// Smallest resolution bandwidth the configured record supports.
pub fn min_rbw(cfg: &Config) -> f64 {
    2.0 / (cfg.sim.duration_s - cfg.sim.settle_s)
}

pub fn beat(cfg: &Config, locks: &[LockConfig], rbw: f64, out: &mut OutputDir) -> Result<(), CliError> {
    if !(rbw >= min_rbw(cfg)) {
        return Err(CliError::Usage(format!(
            "--rbw {rbw} Hz is below 2/duration = {:.3} Hz",
            min_rbw(cfg)
        )));
    }
    let scenario = cfg.scenario();
    let n = cfg.analysis.beat_realizations;
    let spectra = beat_ensemble(&scenario, locks, n, rbw, |_, _| Ok(()))?;
    let mut report = String::new();
    let mut failed = Vec::new();
    for (&lock, spectrum) in &spectra {
        let p_max = spectrum.values().iter().cloned().fold(0.0, f64::max);
        let db: Vec<f64> = spectrum
            .values()
            .iter()
            .map(|&p| 10.0 * (p / p_max).max(1e-30).log10())
            .collect();
        out.write(
            &format!("beat_{lock}.csv"),
            &csv("offset_hz,power_db", &[spectrum.frequencies(), &db]),
        )?;
        let r = analyze_beat(lock, spectrum, &scenario, cfg.analysis.fit_window_hz)?;
        if !report.is_empty() {
            report.push('\n');
        }
        report.push_str(&r.text(n, rbw));
        match r.preferred() {
            Some(fit) => println!(
                "{lock}: {} fit, FWHM {:.1} kHz (measured {:.1} kHz)",
                fit.model.name(),
                fit.fwhm / 1e3,
                r.measured_fwhm / 1e3
            ),
            None => println!(
                "{lock}: no lineshape fit (measured FWHM {:.1} kHz)",
                r.measured_fwhm / 1e3
            ),
        }
        if r.failed() {
            failed.push(lock.name());
        }
    }
    out.write("fits.txt", report.as_bytes())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Analysis(format!(
            "lineshape fit failed for {}; outputs kept and flagged in fits.txt",
            failed.join(", ")
        )))
    }
}

pub fn readout(cfg: &Config, band: Option<(f64, f64)>, out: &mut OutputDir) -> Result<(), CliError> {
    let Some(eit) = &cfg.eit else {
        return Err(CliError::Usage(
            "configuration has no [eit] section; readout needs one".into(),
        ));
    };
    let band = band.unwrap_or((cfg.analysis.readout_band_lo_hz, cfg.analysis.readout_band_hi_hz));
    let options = ReadoutOptions {
        band,
        bands_per_decade: cfg.analysis.bands_per_decade,
        min_averages: cfg.analysis.min_averages,
    };
    let scenario = cfg.scenario();
    let mut probes = BTreeMap::new();
    for lock in [LockConfig::SasOnly, LockConfig::UleReference, LockConfig::Cascade] {
        let run = simulate(&scenario.with_lock(lock))?;
        probes.insert(lock, run.settled(Channel::Absolute)?);
    }
    let table = run_fig3_comparison(&probes, eit, &options)?;
    let mut header = String::from("f_hz");
    let mut columns: Vec<&[f64]> = vec![&table.frequencies];
    for ((lock, mode), curve) in &table.curves {
        out.write(
            &format!("readout_{lock}_{mode}.csv"),
            &csv("f_hz,readout_db_re_floor", &[&table.frequencies, curve]),
        )?;
        let _ = write!(header, ",{lock}_{mode}_db");
        columns.push(curve);
    }
    out.write("readout_table.csv", &csv(&header, &columns))?;
    let summary = table.summary()?;
    let mut text = format!("band_lo_hz = {:e}\nband_hi_hz = {:e}\n", band.0, band.1);
    text.push_str(&summary.to_string());
    for ((lock, mode), n) in &table.clipped {
        if *n > 0 {
            let _ = writeln!(text, "clipped.{lock}.{mode} = {n}");
        }
    }
    out.write("summary.txt", text.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn curves(cfg: &Config, out: &mut OutputDir) -> Result<(), CliError> {
    let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let scenario = cfg.scenario();

    let span = 1.5 * cfg.pdh.mod_freq_hz;
    let d = lin(-span, span, 3001);
    let e: Vec<f64> = d
        .iter()
        .map(|&x| pdh_error_curve(&cfg.pdh, &cfg.cavity, x))
        .collect::<Result<_, _>>()?;
    out.write("pdh_error.csv", &csv("detuning_hz,error_v", &[&d, &e]))?;

    let d = lin(-6e8, 2e8, 4001);
    let t: Vec<f64> = d.iter().map(|&x| sas_transmission(&cfg.sas, x)).collect();
    let e: Vec<f64> = d.iter().map(|&x| sas_error(&cfg.sas, x).volts).collect();
    out.write("sas_transmission.csv", &csv("detuning_hz,transmission", &[&d, &t]))?;
    out.write("sas_error.csv", &csv("detuning_hz,error_v", &[&d, &e]))?;

    if let Some(eit) = &cfg.eit {
        let model = eit.model();
        let d = lin(-20e6, 20e6, 4001);
        for op in eit.operating_points()? {
            let t: Vec<f64> = d
                .iter()
                .map(|&x| eit_transmission(&model, op.probe_detuning + x, op.coupling_detuning))
                .collect();
            out.write(
                &format!("eit_transmission_{}.csv", op.mode),
                &csv("detuning_hz,transmission", &[&d, &t]),
            )?;
        }
    }

    let f: Vec<f64> = (0..=700).map(|i| 10f64.powf(i as f64 / 100.0)).collect();
    let loops = [
        ("inner", scenario.inner_open_loop()?),
        ("outer", scenario.outer_open_loop()?),
        ("sas_only", scenario.sas_only_open_loop()?),
    ];
    for (name, g) in loops {
        let (mag, phase) = bode_columns(&g, &f)?;
        out.write(
            &format!("bode_{name}.csv"),
            &csv("f_hz,mag_db,phase_deg", &[&f, &mag, &phase]),
        )?;
    }
    println!("wrote discriminator, transmission and open-loop curves");
    Ok(())
}

fn bode_columns(g: &TransferFunction, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut mag = Vec::with_capacity(f.len());
    let mut phase = Vec::with_capacity(f.len());
    for &x in f {
        let (m, p) = bode(g, x)?;
        mag.push(20.0 * m.log10());
        phase.push(p.to_degrees());
    }
    Ok((mag, phase))
}

/// Cascade beat linewidth (preferred fit) with the cavity noise scaled.
fn cascade_linewidth(cfg: &Config, scale: f64) -> Result<f64, CliError> {
    let mut scenario = cfg.scenario();
    scenario.cavity.noise = scenario.cavity.noise.scaled(scale);
    let spectra = beat_ensemble(
        &scenario,
        &[LockConfig::Cascade],
        cfg.analysis.beat_realizations,
        cfg.analysis.rbw_hz,
        |_, _| Ok(()),
    )?;
    let r = analyze_beat(
        LockConfig::Cascade,
        &spectra[&LockConfig::Cascade],
        &scenario,
        cfg.analysis.fit_window_hz,
    )?;
    r.preferred()
        .map(|f| f.fwhm)
        .ok_or_else(|| CliError::Analysis("cascade beat could not be fit during calibration".into()))
}

pub fn calibrate(cfg: &Config, out: &mut OutputDir) -> Result<(), CliError> {
    let Some(cal) = cfg.calibration else {
        return Err(CliError::Usage("configuration has no [calibration] section".into()));
    };
    let scenario = cfg.scenario();
    let g1 = scenario.inner_open_loop()?;
    let suppression_db = -20.0 * closed_loop_suppression(&g1, cal.suppression_at_hz)?.log10();

    // bisection on the scale factor, with a square-root-law step tried first
    let target = cal.target_linewidth_hz;
    let (mut lo, mut hi) = (cal.scale_lo, cal.scale_hi);
    let mut scale = 1.0f64.clamp(lo, hi);
    let mut best = (scale, f64::NAN);
    let mut log = String::new();
    for i in 0..cal.iterations.max(1) {
        let lw = cascade_linewidth(cfg, scale)?;
        let _ = writeln!(log, "iteration {i}: scale {scale:.6} -> {:.3} kHz", lw / 1e3);
        eprintln!("calibrate: scale {scale:.5} -> cascade linewidth {:.2} kHz", lw / 1e3);
        if best.1.is_nan() || (lw - target).abs() < (best.1 - target).abs() {
            best = (scale, lw);
        }
        if (lw / target - 1.0).abs() < 0.005 {
            break;
        }
        if lw < target {
            lo = scale;
        } else {
            hi = scale;
        }
        let step = scale * (target / lw).powi(2);
        scale = if step > lo && step < hi { step } else { (lo * hi).sqrt() };
    }
    let (scale, lw) = best;
    let mut calibrated = cfg.clone();
    calibrated.cavity.noise = cfg.cavity.noise.scaled(scale);
    let text = format!(
        "suppression_at_hz = {:e}\nsuppression_db = {suppression_db:.2}\ntarget_suppression_db = {:.2}\n\
         cavity_noise_scale = {scale:.6}\ncascade_linewidth_hz = {lw:e}\ntarget_linewidth_hz = {target:e}\n\n{log}",
        cal.suppression_at_hz, cal.target_suppression_db
    );
    out.write("calibration.txt", text.as_bytes())?;
    out.write("calibrated.toml", calibrated.to_toml()?.as_bytes())?;
    println!(
        "in-loop suppression at {:.0} Hz: {suppression_db:.1} dB (target {:.0} dB)",
        cal.suppression_at_hz, cal.target_suppression_db
    );
    println!(
        "cascade beat linewidth: {:.1} kHz (target {:.1} kHz), cavity-noise scale {scale:.4}",
        lw / 1e3,
        target / 1e3
    );
    Ok(())
}
