//! Born-rule sampling and per-photon routing to the detectors.
//!
//! Occupations are expressed in the measurement frame: slot 0 of each
//! spatial mode is Psi, slot 1 is Perp.

use rand::Rng;

use super::{ClickPattern, DetectionError, Detector, DetectorEfficiencies, MeasurementMode};
use crate::fock::{Occupation, StateVector};

const NORM_TOLERANCE: f64 = 1e-8;

/// Cumulative distribution over the occupations of a normalized state.
#[derive(Debug, Clone)]
pub struct OccupationSampler {
    outcomes: Vec<Occupation>,
    probabilities: Vec<f64>,
    cdf: Vec<f64>,
}

impl OccupationSampler {
    pub fn new(state: &StateVector) -> Result<Self, DetectionError> {
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DetectionError::NotNormalized(norm));
        }
        let mut outcomes = Vec::new();
        let mut probabilities = Vec::new();
        for (occ, amp) in state.iter() {
            let p = amp.norm_sqr();
            if p > 0.0 {
                outcomes.push(occ);
                probabilities.push(p);
            }
        }
        let mut cdf = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for p in &probabilities {
            acc += p;
            cdf.push(acc);
        }
        Ok(Self {
            outcomes,
            probabilities,
            cdf,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (Occupation, f64)> + '_ {
        self.outcomes
            .iter()
            .copied()
            .zip(self.probabilities.iter().copied())
    }

    pub fn probability(&self, occ: &Occupation) -> f64 {
        self.outcomes
            .iter()
            .position(|o| o == occ)
            .map_or(0.0, |i| self.probabilities[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Occupation {
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let i = self.cdf.partition_point(|&c| c <= u);
        self.outcomes[i.min(self.outcomes.len() - 1)]
    }
}

/// One Born-rule draw from a normalized state.
pub fn sample_occupation<R: Rng + ?Sized>(
    state: &StateVector,
    rng: &mut R,
) -> Result<Occupation, DetectionError> {
    Ok(OccupationSampler::new(state)?.sample(rng))
}

fn detect<R: Rng + ?Sized>(
    clicks: &mut ClickPattern,
    d: Detector,
    qe: &DetectorEfficiencies,
    rng: &mut R,
) {
    if rng.random::<f64>() < qe.get(d) {
        clicks.set(d);
    }
}

/// Routes every photon of `occ` independently and applies detector
/// efficiencies. The trigger fires iff `heralded`.
pub fn route_and_detect<R: Rng + ?Sized>(
    occ: &Occupation,
    mode: MeasurementMode,
    qe: &DetectorEfficiencies,
    heralded: bool,
    rng: &mut R,
) -> ClickPattern {
    let mut clicks = ClickPattern::default();
    if heralded {
        clicks.set(Detector::Trigger);
    }
    let [k1_psi, k1_perp, k2_psi, k2_perp] = occ.0;
    match mode {
        MeasurementMode::Cloning => {
            for _ in 0..k1_psi {
                let d = if rng.random::<bool>() {
                    Detector::Da
                } else {
                    Detector::Db
                };
                detect(&mut clicks, d, qe, rng);
            }
            for _ in 0..k1_perp {
                // Arm a blocks Perp; arm b sends it to Db*.
                if !rng.random::<bool>() {
                    detect(&mut clicks, Detector::DbStar, qe, rng);
                }
            }
            for _ in 0..k2_psi + k2_perp {
                detect(&mut clicks, Detector::D2, qe, rng);
            }
        }
        MeasurementMode::UNot => {
            for _ in 0..k1_psi + k1_perp {
                let d = if rng.random::<bool>() {
                    Detector::Da
                } else {
                    Detector::Db
                };
                detect(&mut clicks, d, qe, rng);
            }
            for _ in 0..k2_perp {
                detect(&mut clicks, Detector::D2, qe, rng);
            }
            for _ in 0..k2_psi {
                detect(&mut clicks, Detector::D2Star, qe, rng);
            }
        }
    }
    clicks
}
