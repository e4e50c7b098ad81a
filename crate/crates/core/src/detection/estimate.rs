//! Ratio and fidelity estimators from coincidence counts.

use serde::Serialize;

use super::{DetectionError, MeasurementMode};

/// A value with its one-sigma Poisson uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

/// `R = C1 / (2 C2)` for cloning, `R* = C1 / C2` for the U-NOT gate.
///
/// With `C1 = 0` the estimate is zero and the uncertainty uses one count in
/// its place.
pub fn estimate_ratio(mode: MeasurementMode, c1: u64, c2: u64) -> Result<Estimate, DetectionError> {
    if c2 == 0 {
        return Err(DetectionError::UndefinedEstimate);
    }
    let scale = match mode {
        MeasurementMode::Cloning => 0.5,
        MeasurementMode::UNot => 1.0,
    };
    let c2f = c2 as f64;
    let value = scale * c1 as f64 / c2f;
    let c1_eff = c1.max(1) as f64;
    let sigma = scale * c1_eff / c2f * (1.0 / c1_eff + 1.0 / c2f).sqrt();
    Ok(Estimate { value, sigma })
}

/// Ratio estimate and the fidelity derived from it.
pub fn fidelity_from_counts(
    mode: MeasurementMode,
    c1: u64,
    c2: u64,
) -> Result<(Estimate, Estimate), DetectionError> {
    let r = estimate_ratio(mode, c1, c2)?;
    let f = match mode {
        MeasurementMode::Cloning => Estimate {
            value: (2.0 * r.value + 1.0) / (2.0 * r.value + 2.0),
            sigma: r.sigma / (2.0 * (r.value + 1.0).powi(2)),
        },
        MeasurementMode::UNot => Estimate {
            value: r.value / (r.value + 1.0),
            sigma: r.sigma / (r.value + 1.0).powi(2),
        },
    };
    Ok((r, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloning_estimate() {
        let (r, f) = fidelity_from_counts(MeasurementMode::Cloning, 400, 100).unwrap();
        assert_eq!(r.value, 2.0);
        assert!((r.sigma - 2.0 * (1.0f64 / 400.0 + 1.0 / 100.0).sqrt()).abs() < 1e-15);
        assert!((f.value - 5.0 / 6.0).abs() < 1e-15);
        assert!((f.sigma - r.sigma / 18.0).abs() < 1e-15);
    }

    #[test]
    fn unot_estimate() {
        let (r, f) = fidelity_from_counts(MeasurementMode::UNot, 200, 100).unwrap();
        assert_eq!(r.value, 2.0);
        assert!((f.value - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.sigma - r.sigma / 9.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_counts() {
        assert_eq!(
            estimate_ratio(MeasurementMode::Cloning, 5, 0),
            Err(DetectionError::UndefinedEstimate)
        );
        let r = estimate_ratio(MeasurementMode::UNot, 0, 4).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.sigma > 0.0);
    }
}
