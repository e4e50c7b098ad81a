use qiopa::detection::*;
use qiopa::metrics;
use qiopa::*;

fn setup(mode: MeasurementMode, qubit: PolarizationQubit, g: f64, qe: f64) -> ExperimentSetup {
    let mut s = ExperimentSetup::new(mode, qubit, Gain::new(g).unwrap());
    s.efficiencies = DetectorEfficiencies::uniform(qe);
    s
}

/// `|x - mean| <= 3 sigma` for a ratio of two Poisson counts.
fn ratio_within_3_sigma(c1: u64, c2: u64, expected: f64) -> bool {
    let r = c1 as f64 / c2 as f64;
    let sigma = r * (1.0 / c1 as f64 + 1.0 / c2 as f64).sqrt();
    (r - expected).abs() <= 3.0 * sigma
}

#[test]
fn monte_carlo_matches_enumeration() {
    let mut s = setup(
        MeasurementMode::Cloning,
        PolarizationQubit::diagonal(),
        0.1,
        1.0,
    );
    s.trials = 1_000_000;
    s.master_seed = 2024;
    let exp = Experiment::prepare(&s).unwrap();
    let counts = exp.run(1.0, s.trials, s.master_seed);
    let rates = exp.expected_rates(1.0);
    assert!(ratio_within_3_sigma(
        counts.c1,
        counts.c2,
        rates.c1 / rates.c2
    ));
    let n = s.trials as f64;
    assert!((counts.c1 as f64 - n * rates.c1).abs() <= 3.0 * (n * rates.c1).sqrt());
}

#[test]
fn unot_monte_carlo_matches_enumeration() {
    let mut s = setup(
        MeasurementMode::UNot,
        PolarizationQubit::circular_left(),
        0.1,
        0.55,
    );
    s.trials = 1_000_000;
    s.master_seed = 8;
    let exp = Experiment::prepare(&s).unwrap();
    let counts = exp.run(1.0, s.trials, s.master_seed);
    let rates = exp.expected_rates(1.0);
    assert!(ratio_within_3_sigma(
        counts.c1,
        counts.c2,
        rates.c1 / rates.c2
    ));
}

#[test]
fn enumeration_ratio_tends_to_analytic() {
    let amp = Amplifier::new(Truncation::default()).unwrap();
    let mut last = f64::INFINITY;
    for g in [0.1, 0.03, 0.01] {
        for mode in [MeasurementMode::Cloning, MeasurementMode::UNot] {
            let q = PolarizationQubit::horizontal();
            let exp = Experiment::prepare(&setup(mode, q, g, 1.0)).unwrap();
            let estimate = exp.expected_rates(1.0).ratio(mode);
            let ps = metrics::post_select_amplified(
                &amp.injected_output(&q, Gain::new(g).unwrap(), Order::Full)
                    .unwrap(),
            )
            .unwrap();
            let exact = match mode {
                MeasurementMode::Cloning => metrics::ratio_r(&ps, q.frame()),
                MeasurementMode::UNot => metrics::ratio_r_star(&ps, q.frame()),
            }
            .unwrap();
            let gap = (estimate - exact).abs();
            assert!(gap < 10.0 * g * g, "g={g} {mode:?}: {estimate} vs {exact}");
            if mode == MeasurementMode::Cloning {
                assert!(gap < last);
                last = gap;
            }
        }
    }
}

#[test]
fn ratio_independent_of_efficiency() {
    let q = PolarizationQubit::horizontal();
    let ideal = Experiment::prepare(&setup(MeasurementMode::Cloning, q, 0.02, 1.0)).unwrap();
    let lossy = Experiment::prepare(&setup(MeasurementMode::Cloning, q, 0.02, 0.55)).unwrap();
    let a = ideal.expected_rates(1.0).ratio(MeasurementMode::Cloning);
    let b = lossy.expected_rates(1.0).ratio(MeasurementMode::Cloning);
    assert!((a - b).abs() < 1e-3, "{a} vs {b}");

    // Same statement on sampled counts.
    let s1 = ideal.run(1.0, 400_000, 1);
    let s2 = lossy.run(1.0, 2_000_000, 2);
    let r1 = s1.c1 as f64 / s1.c2 as f64;
    let r2 = s2.c1 as f64 / s2.c2 as f64;
    let sigma = (r1.powi(2) * (1.0 / s1.c1 as f64 + 1.0 / s1.c2 as f64)
        + r2.powi(2) * (1.0 / s2.c1 as f64 + 1.0 / s2.c2 as f64))
        .sqrt();
    assert!((r1 - r2).abs() <= 3.0 * sigma, "{r1} vs {r2} ({sigma})");
}

#[test]
fn coincidences_fall_off_resonance() {
    let mut s = setup(
        MeasurementMode::Cloning,
        PolarizationQubit::diagonal(),
        0.1,
        0.55,
    );
    s.injection.z0 = 0.5;
    s.injection.sigma_z = 1.0;
    let exp = Experiment::prepare(&s).unwrap();
    let rate = |z: f64| exp.expected_rates(s.injection.epsilon_at(z)).c1;
    let offsets = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
    for w in offsets.windows(2) {
        assert!(rate(0.5 + w[1]) <= rate(0.5 + w[0]));
        assert!(rate(0.5 - w[1]) <= rate(0.5 - w[0]));
    }
    let far = rate(100.0);
    let background = exp.expected_rates(0.0).c1;
    assert!((far - background).abs() < 1e-15);

    // Binned sampled means follow the same ordering.
    s.trials = 200_000;
    let bins = z_scan(&s, &[0.5, 1.5, 2.5, 4.5]).unwrap();
    for w in bins.windows(2) {
        let (a, b) = (w[0].counts.c1 as f64, w[1].counts.c1 as f64);
        assert!(b <= a + 3.0 * (a + b).sqrt(), "{a} then {b}");
    }
}

#[test]
fn vacuum_k2_is_unpolarized() {
    let mut s = setup(
        MeasurementMode::UNot,
        PolarizationQubit::diagonal(),
        0.2,
        1.0,
    );
    s.injection.p_peak = 0.0;
    s.trigger = TriggerMode::Ignored;
    s.trials = 400_000;
    s.master_seed = 77;
    let c = run_trials(&s).unwrap();
    let (perp, psi) = (c.single(Detector::D2), c.single(Detector::D2Star));
    assert!(ratio_within_3_sigma(perp, psi, 1.0), "{perp} vs {psi}");
}

#[test]
fn post_selected_sampling_split() {
    let amp = Amplifier::new(Truncation::default()).unwrap();
    let q = PolarizationQubit::circular_left();
    let ps = metrics::post_select_amplified(
        &amp.first_order_output(&q, Gain::new(0.1).unwrap()).unwrap(),
    )
    .unwrap();
    let state = q
        .frame()
        .inverse()
        .rotate(&ps.state().normalized().unwrap())
        .unwrap();
    let sampler = OccupationSampler::new(&state).unwrap();
    let n = 100_000u64;
    let two = (0..n)
        .filter(|&i| sampler.sample(&mut rng::trial_stream(3, i)) == Occupation::new(2, 0, 0, 1))
        .count() as f64;
    let p = 2.0 / 3.0;
    assert!((two / n as f64 - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt());
}

#[test]
fn zscan_is_reproducible_and_peaks_at_center() {
    let mut s = setup(
        MeasurementMode::Cloning,
        PolarizationQubit::horizontal(),
        0.1,
        0.55,
    );
    s.injection.z0 = -1.0;
    s.injection.sigma_z = 2.0;
    s.trials = 60_000;
    s.master_seed = 31;
    let zs: Vec<f64> = (0..21).map(|i| -11.0 + i as f64).collect();
    let a = z_scan(&s, &zs).unwrap();
    let b = z_scan(&s, &zs).unwrap();
    assert_eq!(a, b);
    let peak = a.iter().max_by_key(|p| p.counts.c1).unwrap();
    assert!((peak.z + 1.0).abs() <= 3.0);
}

#[test]
fn absent_unmatched_photon_leaves_no_herald() {
    let mut s = setup(
        MeasurementMode::Cloning,
        PolarizationQubit::horizontal(),
        0.1,
        1.0,
    );
    s.injection.p_peak = 0.0;
    s.injection.unmatched = UnmatchedPhoton::Absent;
    s.trials = 50_000;
    let c = run_trials(&s).unwrap();
    assert_eq!((c.c1, c.c2, c.single(Detector::Trigger)), (0, 0, 0));
}
