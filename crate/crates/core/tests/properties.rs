use std::f64::consts::{LN_2, PI};

use lockloop_core::cascade::LockConfig;
use lockloop_core::config::Config;
use lockloop_core::lti::{closed_loop_suppression, make_pid, PidConfig, TransferFunction};
use lockloop_core::noise::{compose, derive_seed, psd_eval, synthesize_model, Psd, PsdModel};
use lockloop_core::spectral::{
    fit_lineshape, measured_fwhm, welch_psd, LineshapeModel, SpectrumKind, SpectrumSeries, Window,
};
use proptest::prelude::*;

fn line(model: LineshapeModel, width: f64, center: f64, df: f64, n: usize) -> SpectrumSeries {
    let f: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * df).collect();
    let p = f
        .iter()
        .map(|&x| {
            let u = (x - center) / width;
            match model {
                LineshapeModel::Gaussian => (-4.0 * LN_2 * u * u).exp(),
                LineshapeModel::Lorentzian => 1.0 / (1.0 + 4.0 * u * u),
            }
        })
        .collect();
    SpectrumSeries::new(f, p, SpectrumKind::BeatPower, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_a_model_scales_its_density(
        exponent in -4.0f64..1.0,
        amp in 1e-3f64..1e6,
        k in 1e-3f64..1e3,
        f in 1.0f64..1e5,
    ) {
        let m = PsdModel::power_law(0.1, 1e6, exponent, amp, 100.0).unwrap();
        let a = psd_eval(&m, f).unwrap().density;
        let b = psd_eval(&m.scaled(k), f).unwrap().density;
        prop_assert!((b / (k * a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composed_density_is_the_sum(
        e1 in -3.0f64..0.0,
        e2 in -3.0f64..0.0,
        floor in 1e-3f64..1e3,
        f in 1.0f64..1e5,
    ) {
        let a = PsdModel::power_law(0.1, 1e6, e1, 10.0, 100.0).unwrap();
        let b = PsdModel::power_law(0.1, 1e6, e2, 3.0, 100.0).unwrap().with_floor(floor);
        let c = compose(&[a.clone(), b.clone()]).unwrap();
        let want = a.density(f) + b.density(f);
        prop_assert!((c.density(f) / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn suppression_is_inverse_of_return_difference(
        kp in 0.0f64..10.0,
        ki in 1.0f64..1e6,
        f in 1.0f64..1e6,
    ) {
        let pid = make_pid(&PidConfig {
            kp,
            ki,
            kd: 0.0,
            derivative_rolloff: 1e6,
            output_low_pass: 1e7,
            saturation: 10.0,
        })
        .unwrap();
        let g = pid.series(&TransferFunction::low_pass(1e5));
        let s = closed_loop_suppression(&g, f).unwrap();
        let rd = (num_complex::Complex64::new(1.0, 0.0) + g.response(f)).norm();
        prop_assert!((s * rd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn series_responses_multiply(a in 1.0f64..1e6, b in 1.0f64..1e6, f in 0.1f64..1e7) {
        let x = TransferFunction::low_pass(a);
        let y = TransferFunction::integrator(b);
        let got = x.series(&y).response(f);
        let want = x.response(f) * y.response(f);
        prop_assert!((got - want).norm() <= 1e-12 * want.norm());
    }

    #[test]
    fn measured_fwhm_recovers_smooth_lines(
        width in 20.0f64..400.0,
        center in -50.0f64..50.0,
        gaussian in any::<bool>(),
    ) {
        let model = if gaussian { LineshapeModel::Gaussian } else { LineshapeModel::Lorentzian };
        let s = line(model, width, center, 1.0, 4096);
        let w = measured_fwhm(&s).unwrap();
        prop_assert!((w - width).abs() < 0.02 * width + 0.5, "{w} vs {width}");
    }

    #[test]
    fn fits_recover_width_and_center(
        width in 30.0f64..300.0,
        center in -50.0f64..50.0,
        gaussian in any::<bool>(),
    ) {
        let model = if gaussian { LineshapeModel::Gaussian } else { LineshapeModel::Lorentzian };
        let s = line(model, width, center, 1.0, 4096);
        let fit = fit_lineshape(&s, model, None).unwrap();
        prop_assert!((fit.fwhm / width - 1.0).abs() < 1e-3, "{} vs {width}", fit.fwhm);
        prop_assert!((fit.center - center).abs() < 1e-2 * width);
        prop_assert!(fit.residual_rms < 1e-3);
    }

    #[test]
    fn seed_streams_do_not_collide(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(seed, a), derive_seed(seed, b));
    }

    #[test]
    fn config_round_trips_with_any_seed(seed in 0..=i64::MAX as u64, lock in 0usize..5) {
        let mut cfg = Config::default_config();
        cfg.seed = seed;
        cfg.lock_config = LockConfig::ALL[lock];
        let back = Config::parse(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Welch densities integrate to the sample variance.
    #[test]
    fn welch_satisfies_parseval(level in 1e-2f64..1e4, seed in any::<u64>()) {
        let fs = 1e5;
        let x = synthesize_model(&PsdModel::white(level), fs, 1 << 16, seed).unwrap();
        let p = welch_psd(&x, 4096, 0.5, Window::Hann).unwrap();
        let df = p.resolution();
        let power: f64 = p.values().iter().sum::<f64>() * df;
        prop_assert!((power / x.variance() - 1.0).abs() < 0.05, "{power} vs {}", x.variance());
        prop_assert!((x.variance() / (level * fs / 2.0) - 1.0).abs() < 0.05);
    }
}

#[test]
fn lock_names_round_trip() {
    for lock in LockConfig::ALL {
        assert_eq!(lock.name().parse::<LockConfig>().unwrap(), lock);
        assert_eq!(lock.to_string(), lock.name());
    }
    let err = "tight".parse::<LockConfig>().unwrap_err().to_string();
    assert!(err.contains("ule_reference"), "{err}");
}

#[test]
fn integrator_suppression_follows_frequency() {
    // |1/(1+G)| -> 2 pi f / ki well below the unity-gain point
    let ki = 2.0 * PI * 1e4;
    let g = TransferFunction::integrator(ki);
    for f in [1.0, 10.0, 100.0] {
        let s = closed_loop_suppression(&g, f).unwrap();
        assert!((s / (f / 1e4) - 1.0).abs() < 1e-3, "{f}: {s}");
    }
}
