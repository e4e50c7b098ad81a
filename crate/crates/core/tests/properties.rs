mod oracles;

use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;
use qiopa::fock::{inner_product, LossPolicy};
use qiopa::metrics::{self, entropy_pair};
use qiopa::opa::rotate_polarization;
use qiopa::*;

fn amplifier() -> &'static Amplifier {
    static AMP: OnceLock<Amplifier> = OnceLock::new();
    AMP.get_or_init(|| Amplifier::new(Truncation::default()).unwrap())
}

fn qubit_strategy() -> impl Strategy<Value = PolarizationQubit> {
    (-1.0f64..=1.0, 0.0..std::f64::consts::TAU).prop_map(|(c, phi)| {
        let theta = c.acos();
        PolarizationQubit::new(
            Complex64::new((theta / 2.0).cos(), 0.0),
            Complex64::from_polar((theta / 2.0).sin(), phi),
        )
        .unwrap()
    })
}

fn evolve(q: &PolarizationQubit, g: f64) -> StateVector {
    let amp = amplifier();
    amp.evolve(
        &amp.prepare_injected(q),
        Gain::new(g).unwrap(),
        LossPolicy::Report,
    )
    .unwrap()
    .state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn evolution_preserves_norm(q in qubit_strategy(), g in 0.0f64..0.2) {
        let out = evolve(&q, g);
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn reduced_entropies_agree(q in qubit_strategy(), g in 0.01f64..0.3) {
        let (s1, s2) = entropy_pair(&evolve(&q, g)).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-10, "{} vs {}", s1, s2);
    }

    #[test]
    fn fidelities_are_universal(q in qubit_strategy(), g in 0.01f64..0.2) {
        let r = metrics::fidelity_report(amplifier(), &q, Gain::new(g).unwrap(), Order::Full).unwrap();
        let h = metrics::fidelity_report(amplifier(), &PolarizationQubit::horizontal(), Gain::new(g).unwrap(), Order::Full).unwrap();
        prop_assert!((r.f - h.f).abs() < 1e-8);
        prop_assert!((r.f_star - h.f_star).abs() < 1e-8);
    }

    #[test]
    fn frame_covariance(q in qubit_strategy(), g in 0.0f64..0.2) {
        let direct = evolve(&q, g);
        let rotated = rotate_polarization(&evolve(&PolarizationQubit::horizontal(), g), q).unwrap();
        prop_assert!(direct.max_abs_diff(&rotated).unwrap() < 1e-10);
    }

    #[test]
    fn gains_compose(q in qubit_strategy(), g1 in 0.0f64..0.1, g2 in 0.0f64..0.1) {
        let amp = amplifier();
        let once = evolve(&q, g1 + g2);
        let first = amp.propagator(Gain::new(g1).unwrap()).apply(&amp.prepare_injected(&q)).unwrap().state;
        let twice = amp.propagator(Gain::new(g2).unwrap()).apply(&first).unwrap().state;
        prop_assert!(once.max_abs_diff(&twice).unwrap() < 1e-8);
    }
}

#[test]
fn matches_closed_form_squeezing() {
    for g in [1e-3, 1e-2, 0.1, 0.2] {
        let out = evolve(&PolarizationQubit::horizontal(), g);
        let err = out
            .basis()
            .tuples()
            .iter()
            .map(|occ| (out.amplitude(occ) - oracles::injected_h_amplitude(g, occ.0)).norm())
            .fold(0.0, f64::max);
        let tol = if g <= 0.1 { 1e-8 } else { 5e-6 };
        assert!(err < tol, "g={g}: {err:e}");
    }
}

#[test]
fn vacuum_matches_closed_form() {
    let amp = amplifier();
    let g = 0.1;
    let out = amp
        .evolve(&amp.vacuum(), Gain::new(g).unwrap(), LossPolicy::Report)
        .unwrap()
        .state;
    for occ in out.basis().tuples() {
        let want = oracles::vacuum_amplitude(g, occ.0);
        assert!((out.amplitude(occ) - want).norm() < 1e-8, "{occ}");
    }
}

#[test]
fn matches_dense_eigendecomposition() {
    let q = PolarizationQubit::circular_left();
    let g = 0.1;
    let input = [([1, 0, 0, 0], q.alpha()), ([0, 1, 0, 0], q.beta())];
    let oracle = oracles::dense_sector_evolution(12, 23, g, &input);
    let out = evolve(&q, g);
    let mut err: f64 = 0.0;
    for (t, want) in &oracle {
        err = err.max((out.amplitude(&Occupation(*t)) - want).norm());
    }
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn first_order_convergence() {
    let amp = amplifier();
    let q = PolarizationQubit::diagonal();
    let err = |g: f64| {
        let gain = Gain::new(g).unwrap();
        amp.first_order_output(&q, gain)
            .unwrap()
            .max_abs_diff(&evolve(&q, g))
            .unwrap()
    };
    let (e1, e2) = (err(1e-3), err(1e-2));
    let order = oracles::observed_order(1e-3, e1, 1e-2, e2);
    assert!(order >= 1.9, "order {order}");
}

#[test]
fn evolution_is_unitary_on_pairs() {
    let amp = amplifier();
    let gain = Gain::new(0.15).unwrap();
    let a = amp.prepare_injected(&PolarizationQubit::diagonal());
    let b = amp.prepare_injected(&PolarizationQubit::diagonal().orthogonal());
    let p = amp.propagator(gain);
    let ua = p.apply(&a).unwrap().state;
    let ub = p.apply(&b).unwrap().state;
    assert!(inner_product(&ua, &ub).unwrap().norm() < 1e-9);
    assert!((inner_product(&ua, &ua).unwrap().re - 1.0).abs() < 1e-9);
}
