use lockloop_core::cascade::{
    analytic_residual_psd, run_comparison, simulate, AnalyticModel, Channel, LockConfig, Scenario,
};
use lockloop_core::config::Config;
use lockloop_core::lti::unity_gain_frequency;
use lockloop_core::noise::PsdModel;
use lockloop_core::spectral::{log_bands, welch_with_averages};
use lockloop_core::Error;

fn short(lock: LockConfig) -> Scenario {
    let mut s = Config::default_config().scenario().with_lock(lock);
    s.timing.duration_s = 0.12;
    s
}

/// Worst band-averaged gap in dB between simulation and loop algebra.
fn worst_gap_db(s: &Scenario, channel: Channel, f_hi: f64) -> f64 {
    let run = simulate(s).unwrap();
    let p = welch_with_averages(&run.settled(channel).unwrap(), 30).unwrap();
    let model = AnalyticModel::new(s, true).unwrap();
    let mut worst: f64 = 0.0;
    for (lo, hi) in log_bands(4.0 * p.resolution(), f_hi, 3) {
        let (sim, _) = p.band_average(lo, hi).unwrap();
        let bins: Vec<f64> = p.frequencies().iter().copied().filter(|&f| f >= lo && f < hi).collect();
        let ana = bins
            .iter()
            .map(|&f| model.channel_psd(channel, f).unwrap())
            .sum::<f64>()
            / bins.len() as f64;
        worst = worst.max((10.0 * (sim / ana).log10()).abs());
    }
    worst
}

#[test]
fn cascade_absolute_noise_follows_loop_algebra() {
    let gap = worst_gap_db(&short(LockConfig::Cascade), Channel::Absolute, 3e5);
    assert!(gap < 1.0, "worst gap {gap:.2} dB");
}

#[test]
fn lc_only_relative_noise_follows_loop_algebra() {
    let gap = worst_gap_db(&short(LockConfig::LcOnly), Channel::Relative, 3e5);
    assert!(gap < 1.0, "worst gap {gap:.2} dB");
}

#[test]
fn runs_are_reproducible_and_share_noise() {
    let a = simulate(&short(LockConfig::FreeRun)).unwrap();
    let b = simulate(&short(LockConfig::FreeRun)).unwrap();
    assert_eq!(a.absolute_freq_noise.samples(), b.absolute_freq_noise.samples());

    // the free-running laser and the unlocked cavity see the same draws in
    // every configuration that leaves them alone
    let lc = simulate(&short(LockConfig::LcOnly)).unwrap();
    assert_eq!(a.cavity_mode_noise.samples(), lc.cavity_mode_noise.samples());

    let mut other = short(LockConfig::FreeRun);
    other.seed ^= 1;
    let c = simulate(&other).unwrap();
    assert_ne!(a.absolute_freq_noise.samples(), c.absolute_freq_noise.samples());
}

#[test]
fn comparison_refuses_mismatched_scenarios() {
    let a = short(LockConfig::FreeRun);
    let mut b = short(LockConfig::Cascade);
    b.seed += 1;
    assert!(matches!(run_comparison(&[a, b]), Err(Error::Argument(_))));
}

#[test]
fn excess_loop_delay_is_reported_as_instability() {
    let mut s = short(LockConfig::LcOnly);
    s.fast_actuator.delay_s = 4e-7;
    match simulate(&s) {
        Err(Error::Unstable { loop_name, .. }) => assert!(loop_name.contains("PDH"), "{loop_name}"),
        other => panic!("expected instability, got {:?}", other.map(|r| r.saturation_events)),
    }
}

#[test]
fn slow_rate_must_divide_fast_rate() {
    let mut s = short(LockConfig::Cascade);
    s.rates.slow_hz = 3e4;
    assert!(matches!(s.validate(), Err(Error::Config(_))));
}

#[test]
fn silent_noise_gives_silent_outputs() {
    let mut s = short(LockConfig::Cascade);
    s.timing.duration_s = 0.03;
    s.laser_noise = PsdModel::zero();
    s.cavity.noise = PsdModel::zero();
    s.pdh.detector_noise = PsdModel::zero();
    s.pdh.intensity_noise = PsdModel::zero();
    s.ule_noise = PsdModel::zero();
    let run = simulate(&s).unwrap();
    for ch in [Channel::Absolute, Channel::Relative, Channel::Cavity, Channel::Error] {
        assert!(run.channel(ch).samples().iter().all(|&v| v == 0.0), "{ch:?}");
    }
}

#[test]
fn outer_loop_is_invisible_before_it_engages() {
    let mut lc = short(LockConfig::LcOnly);
    lc.timing.duration_s = 0.01;
    lc.timing.settle_s = 0.005;
    let cas = lc.with_lock(LockConfig::Cascade);
    let a = simulate(&lc).unwrap();
    let b = simulate(&cas).unwrap();
    let n = (lc.timing.outer_engage_s * lc.rates.record_hz()) as usize;
    assert!(n > 10);
    assert_eq!(
        &a.absolute_freq_noise.samples()[..n],
        &b.absolute_freq_noise.samples()[..n]
    );
}

#[test]
fn outer_loop_leaves_high_frequencies_alone() {
    let lc = short(LockConfig::LcOnly);
    let cas = lc.with_lock(LockConfig::Cascade);
    let ugf = unity_gain_frequency(&cas.outer_open_loop().unwrap(), 1.0, 1e5).unwrap();
    for f in [10.0 * ugf, 30.0 * ugf, 1e5, 1e6] {
        let d = 10.0 * (analytic_residual_psd(&cas, f).unwrap() / analytic_residual_psd(&lc, f).unwrap()).log10();
        assert!(d.abs() < 1.0, "{f} Hz: {d:.2} dB");
    }
}
