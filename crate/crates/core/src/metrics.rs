//! Cloning and U-NOT figures of merit on the amplified component of the output.
//!
//! All quantities are conditioned on at least one photon in spatial mode `k2`,
//! which is where the amplification signature lives.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fock::{
    density_from_pure, partial_trace, DensityMatrix, FockError, ReducedDensityMatrix, SpatialMode,
    StateVector,
};
use crate::opa::{Amplifier, Gain, ModelError, Order};
use crate::polarization::{PolarizationFrame, PolarizationQubit};

/// Projected weights at or below this count as "no amplification".
const MIN_AMPLIFIED_WEIGHT: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no amplification: the state has no weight with a photon in k2")]
    NoAmplification,
    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),
    #[error("ratio must be non-negative, got {0}")]
    NegativeRatio(f64),
    #[error("universality scan needs at least one qubit")]
    EmptyScan,
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Output state conditioned on the amplification event.
#[derive(Debug, Clone)]
pub struct PostSelectedState {
    state: StateVector,
    rho: DensityMatrix,
    rho1: ReducedDensityMatrix,
    rho2: ReducedDensityMatrix,
}

impl PostSelectedState {
    /// Normalized projected pure state.
    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn rho(&self) -> &DensityMatrix {
        &self.rho
    }

    /// Reduced state of the cloning channel `k1`.
    pub fn rho1(&self) -> &ReducedDensityMatrix {
        &self.rho1
    }

    /// Reduced state of the anticloning channel `k2`.
    pub fn rho2(&self) -> &ReducedDensityMatrix {
        &self.rho2
    }

    pub fn success_probability(&self) -> f64 {
        self.rho.success_probability()
    }
}

/// Projects onto `n(k2) >= 1` and renormalizes. The success probability is
/// the projected weight relative to the input norm, so unnormalized inputs
/// are accepted.
pub fn post_select_amplified(state: &StateVector) -> Result<PostSelectedState, MetricsError> {
    let total = state.norm_sqr();
    let projected = state.project(|o| o.spatial_total(SpatialMode::K2) >= 1);
    let weight = projected.norm_sqr();
    if total == 0.0 || weight <= MIN_AMPLIFIED_WEIGHT * total {
        return Err(MetricsError::NoAmplification);
    }
    let state = projected.normalized()?;
    let rho = density_from_pure(&state)?.with_success_probability(weight / total);
    let rho1 = partial_trace(&rho, SpatialMode::K1);
    let rho2 = partial_trace(&rho, SpatialMode::K2);
    Ok(PostSelectedState {
        state,
        rho,
        rho1,
        rho2,
    })
}

fn ratio(num: f64, den: f64, what: &'static str) -> Result<f64, MetricsError> {
    if den <= 0.0 {
        return Err(MetricsError::ZeroDenominator(what));
    }
    Ok(num / den)
}

/// `Tr(rho1 n_Psi) / Tr(rho1 n_1)`.
pub fn cloning_fidelity(
    ps: &PostSelectedState,
    frame: impl Into<PolarizationFrame>,
) -> Result<f64, MetricsError> {
    let frame = frame.into();
    ratio(
        ps.rho1.number_along(frame.psi()),
        ps.rho1.total_number(),
        "Tr(rho1 n1)",
    )
}

/// `Tr(rho2 n_Perp) / Tr(rho2 n_2)`.
pub fn unot_fidelity(
    ps: &PostSelectedState,
    frame: impl Into<PolarizationFrame>,
) -> Result<f64, MetricsError> {
    let frame = frame.into();
    ratio(
        ps.rho2.number_along(frame.perp()),
        ps.rho2.total_number(),
        "Tr(rho2 n2)",
    )
}

/// `P(k1 in |2 Psi, 0>) / P(k1 in |1 Psi, 1 Perp>)`.
pub fn ratio_r(
    ps: &PostSelectedState,
    frame: impl Into<PolarizationFrame>,
) -> Result<f64, MetricsError> {
    let frame = frame.into();
    ratio(
        ps.rho1.frame_population(&frame, 2, 0),
        ps.rho1.frame_population(&frame, 1, 1),
        "P(|1,1>)",
    )
}

/// `Tr(rho2 n_Perp) / Tr(rho2 n_Psi)`.
pub fn ratio_r_star(
    ps: &PostSelectedState,
    frame: impl Into<PolarizationFrame>,
) -> Result<f64, MetricsError> {
    let frame = frame.into();
    ratio(
        ps.rho2.number_along(frame.perp()),
        ps.rho2.number_along(frame.psi()),
        "Tr(rho2 n_Psi)",
    )
}

/// `F = (2R + 1) / (2R + 2)`.
pub fn fidelity_from_ratio(r: f64) -> Result<f64, MetricsError> {
    if r.is_nan() || r < 0.0 {
        return Err(MetricsError::NegativeRatio(r));
    }
    Ok((2.0 * r + 1.0) / (2.0 * r + 2.0))
}

/// `F* = R* / (R* + 1)`.
pub fn fidelity_star_from_ratio(r_star: f64) -> Result<f64, MetricsError> {
    if r_star.is_nan() || r_star < 0.0 {
        return Err(MetricsError::NegativeRatio(r_star));
    }
    Ok(r_star / (r_star + 1.0))
}

/// `(S(rho1), S(rho2))` in bits for a pure global state (normalized here).
pub fn entropy_pair(state: &StateVector) -> Result<(f64, f64), MetricsError> {
    let rho = density_from_pure(&state.normalized()?)?;
    let s1 = partial_trace(&rho, SpatialMode::K1).von_neumann_entropy()?;
    let s2 = partial_trace(&rho, SpatialMode::K2).von_neumann_entropy()?;
    Ok((s1, s2))
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityReport {
    pub f: f64,
    pub f_star: f64,
    pub r: f64,
    pub r_star: f64,
    pub s1: f64,
    pub s2: f64,
    pub success_probability: f64,
    pub qubit: PolarizationQubit,
    pub g: Gain,
}

pub fn evaluate(
    ps: &PostSelectedState,
    qubit: &PolarizationQubit,
    gain: Gain,
) -> Result<FidelityReport, MetricsError> {
    let frame = qubit.frame();
    Ok(FidelityReport {
        f: cloning_fidelity(ps, frame)?,
        f_star: unot_fidelity(ps, frame)?,
        r: ratio_r(ps, frame)?,
        r_star: ratio_r_star(ps, frame)?,
        s1: ps.rho1.von_neumann_entropy()?,
        s2: ps.rho2.von_neumann_entropy()?,
        success_probability: ps.success_probability(),
        qubit: *qubit,
        g: gain,
    })
}

/// Output state, post-selection and report for one injected qubit.
pub fn fidelity_report(
    amplifier: &Amplifier,
    qubit: &PolarizationQubit,
    gain: Gain,
    order: Order,
) -> Result<FidelityReport, MetricsError> {
    let out = amplifier.injected_output(qubit, gain, order)?;
    evaluate(&post_select_amplified(&out)?, qubit, gain)
}

#[derive(Debug, Clone)]
pub struct UniversalityScan {
    pub reports: Vec<FidelityReport>,
    /// `max |F - median(F)|`.
    pub max_deviation_f: f64,
    /// `max |F* - median(F*)|`.
    pub max_deviation_f_star: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn max_deviation(values: &[f64]) -> f64 {
    let m = median(values);
    values.iter().map(|v| (v - m).abs()).fold(0.0, f64::max)
}

pub fn universality_scan(
    amplifier: &Amplifier,
    qubits: &[PolarizationQubit],
    gain: Gain,
    order: Order,
) -> Result<UniversalityScan, MetricsError> {
    if qubits.is_empty() {
        return Err(MetricsError::EmptyScan);
    }
    let propagator = amplifier.propagator(gain);
    let reports = qubits
        .par_iter()
        .map(|q| {
            let out = match order {
                Order::First => amplifier.first_order_output(q, gain)?,
                Order::Full => propagator.apply(&amplifier.prepare_injected(q))?.state,
            };
            evaluate(&post_select_amplified(&out)?, q, gain)
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let f: Vec<f64> = reports.iter().map(|r| r.f).collect();
    let fs: Vec<f64> = reports.iter().map(|r| r.f_star).collect();
    Ok(UniversalityScan {
        max_deviation_f: max_deviation(&f),
        max_deviation_f_star: max_deviation(&fs),
        reports,
    })
}
