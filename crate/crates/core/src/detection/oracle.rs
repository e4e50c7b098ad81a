//! Exact per-trial coincidence probabilities, summed over the output
//! distributions instead of sampled.

use serde::Serialize;

use super::{
    with_injected_photon, Detector, DetectorEfficiencies, Experiment, MeasurementMode, TriggerMode,
    UnmatchedPhoton,
};
use crate::fock::Occupation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedRates {
    pub c1: f64,
    pub c2: f64,
}

impl ExpectedRates {
    /// The ratio the count estimator converges to.
    pub fn ratio(&self, mode: MeasurementMode) -> f64 {
        match mode {
            MeasurementMode::Cloning => 0.5 * self.c1 / self.c2,
            MeasurementMode::UNot => self.c1 / self.c2,
        }
    }

    pub fn fidelity(&self, mode: MeasurementMode) -> f64 {
        let r = self.ratio(mode);
        match mode {
            MeasurementMode::Cloning => (2.0 * r + 1.0) / (2.0 * r + 2.0),
            MeasurementMode::UNot => r / (r + 1.0),
        }
    }
}

/// Probability that at least one of `n` photons, each detected with
/// probability `p`, is registered.
fn any_of(n: u8, p: f64) -> f64 {
    1.0 - (1.0 - p).powi(i32::from(n))
}

/// Both Da and Db fire when `n` photons are split 50:50 between them.
fn both_arms(n: u8, qa: f64, qb: f64) -> f64 {
    let n = i32::from(n);
    1.0 - (1.0 - qa / 2.0).powi(n) - (1.0 - qb / 2.0).powi(n) + (1.0 - qa / 2.0 - qb / 2.0).powi(n)
}

/// Probabilities of the C1 and C2 coincidence sets for one occupation,
/// excluding the trigger.
pub fn coincidence_probabilities(
    occ: &Occupation,
    mode: MeasurementMode,
    qe: &DetectorEfficiencies,
) -> (f64, f64) {
    let [k1_psi, k1_perp, k2_psi, k2_perp] = occ.0;
    let q = |d| qe.get(d);
    match mode {
        MeasurementMode::Cloning => {
            let d2 = any_of(k2_psi + k2_perp, q(Detector::D2));
            let c1 = d2 * both_arms(k1_psi, q(Detector::Da), q(Detector::Db));
            let c2 = d2
                * any_of(k1_psi, q(Detector::Da) / 2.0)
                * any_of(k1_perp, q(Detector::DbStar) / 2.0);
            (c1, c2)
        }
        MeasurementMode::UNot => {
            let arms = both_arms(k1_psi + k1_perp, q(Detector::Da), q(Detector::Db));
            (
                arms * any_of(k2_perp, q(Detector::D2)),
                arms * any_of(k2_psi, q(Detector::D2Star)),
            )
        }
    }
}

pub(super) fn expected_rates(exp: &Experiment, epsilon: f64) -> ExpectedRates {
    let setup = exp.setup();
    let mode = setup.mode;
    let qe = &setup.efficiencies;
    let herald = |heralded: bool| match setup.trigger {
        TriggerMode::Ignored => 1.0,
        TriggerMode::Required => f64::from(u8::from(heralded)),
    };
    let mut c1 = 0.0;
    let mut c2 = 0.0;
    for (occ, p) in exp.matched_distribution().iter() {
        let (a, b) = coincidence_probabilities(&occ, mode, qe);
        c1 += epsilon * p * a;
        c2 += epsilon * p * b;
    }
    let (unmatched_herald, add_photon) = match setup.injection.unmatched {
        UnmatchedPhoton::Distinguishable => (herald(true), true),
        UnmatchedPhoton::Absent => (herald(false), false),
    };
    for (occ, p) in exp.vacuum_distribution().iter() {
        let occ = if add_photon {
            with_injected_photon(occ)
        } else {
            occ
        };
        let (a, b) = coincidence_probabilities(&occ, mode, qe);
        let w = (1.0 - epsilon) * p * unmatched_herald;
        c1 += w * a;
        c2 += w * b;
    }
    ExpectedRates { c1, c2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_occupations() {
        let qe = DetectorEfficiencies::uniform(1.0);
        let (c1, c2) =
            coincidence_probabilities(&Occupation::new(2, 0, 0, 1), MeasurementMode::Cloning, &qe);
        assert!((c1 - 0.5).abs() < 1e-15 && c2 == 0.0);
        let (c1, c2) =
            coincidence_probabilities(&Occupation::new(1, 1, 1, 0), MeasurementMode::Cloning, &qe);
        assert!(c1 == 0.0 && (c2 - 0.25).abs() < 1e-15);
        let (c1, c2) =
            coincidence_probabilities(&Occupation::new(1, 1, 1, 0), MeasurementMode::UNot, &qe);
        assert!(c1 == 0.0 && (c2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn efficiency_scaling() {
        let q = 0.55;
        let qe = DetectorEfficiencies::uniform(q);
        let (c1, _) =
            coincidence_probabilities(&Occupation::new(2, 0, 0, 1), MeasurementMode::Cloning, &qe);
        assert!((c1 - q * q * q / 2.0).abs() < 1e-15);
    }
}
