//! Weighted least-squares Gaussian peak fitting.
//!
//! Model: `a(z) = A exp(-(z - c)^2 / (2 w^2)) + B`, solved by damped
//! Gauss-Newton (Levenberg-Marquardt) iteration.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::Serialize;
use thiserror::Error;

pub const MIN_POINTS: usize = 5;
pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-8;
const LAMBDA_MAX: f64 = 1e16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("input lengths differ")]
    LengthMismatch,
    #[error("non-finite input or non-positive uncertainty")]
    InvalidInput,
    #[error("no convergence after {0} iterations")]
    NotConverged(usize),
    #[error("normal equations are singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub offset: f64,
    /// One-sigma uncertainties in the order (A, c, w, B).
    pub sigmas: [f64; 4],
    /// Unweighted residual norm `||y - a(z)||_2`.
    pub residual: f64,
    pub chi2: f64,
    pub iterations: usize,
    /// Data flat within machine noise; only the offset is meaningful.
    pub flat: bool,
}

/// Amplitude and offset of a peak with known center and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakAmplitudeFit {
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    pub offset: f64,
    pub offset_sigma: f64,
}

impl PeakAmplitudeFit {
    /// `|A| <= k sigma_A`.
    pub fn consistent_with_zero(&self, k: f64) -> bool {
        self.amplitude.abs() <= k * self.amplitude_sigma
    }
}

/// Poisson uncertainty of a count, floored at one count.
pub fn poisson_sigma(count: f64) -> f64 {
    count.max(1.0).sqrt()
}

fn check(z: &[f64], y: &[f64], y_err: &[f64]) -> Result<(), FitError> {
    if z.len() != y.len() || z.len() != y_err.len() {
        return Err(FitError::LengthMismatch);
    }
    if z.len() < MIN_POINTS {
        return Err(FitError::TooFewPoints(z.len()));
    }
    let bad = z.iter().chain(y).any(|v| !v.is_finite())
        || y_err.iter().any(|&s| !(s > 0.0 && s.is_finite()));
    if bad {
        return Err(FitError::InvalidInput);
    }
    Ok(())
}

fn model(p: &Vector4<f64>, z: f64) -> (f64, Vector4<f64>) {
    let (a, c, w, b) = (p[0], p[1], p[2], p[3]);
    let u = (z - c) / w;
    let e = (-0.5 * u * u).exp();
    let grad = Vector4::new(e, a * e * u / w, a * e * u * u / w, 1.0);
    (a * e + b, grad)
}

fn normal_equations(
    z: &[f64],
    y: &[f64],
    y_err: &[f64],
    p: &Vector4<f64>,
) -> (Matrix4<f64>, Vector4<f64>, f64) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    let mut chi2 = 0.0;
    for ((&zi, &yi), &si) in z.iter().zip(y).zip(y_err) {
        let (f, grad) = model(p, zi);
        let r = (yi - f) / si;
        let g = grad / si;
        jtj += g * g.transpose();
        jtr += g * r;
        chi2 += r * r;
    }
    (jtj, jtr, chi2)
}

fn chi2_at(z: &[f64], y: &[f64], y_err: &[f64], p: &Vector4<f64>) -> f64 {
    z.iter()
        .zip(y)
        .zip(y_err)
        .map(|((&zi, &yi), &si)| ((yi - model(p, zi).0) / si).powi(2))
        .sum()
}

fn initial_guess(z: &[f64], y: &[f64]) -> Vector4<f64> {
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let a = ymax - ymin;
    let c = z[imax];
    // Width from the second moment of the baseline-subtracted data.
    let (mut s0, mut s2) = (0.0, 0.0);
    for (&zi, &yi) in z.iter().zip(y) {
        let h = yi - ymin;
        s0 += h;
        s2 += h * (zi - c).powi(2);
    }
    let zmin = z.iter().copied().fold(f64::INFINITY, f64::min);
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (zmax - zmin).max(f64::MIN_POSITIVE);
    let mut w = if s0 > 0.0 { (s2 / s0).sqrt() } else { 0.0 };
    if !(w > 0.0 && w < span) {
        w = span / 4.0;
    }
    Vector4::new(a, c, w, ymin)
}

/// Fits the Gaussian-plus-offset model with per-point uncertainties `y_err`.
pub fn fit_gaussian(z: &[f64], y: &[f64], y_err: &[f64]) -> Result<GaussianFit, FitError> {
    check(z, y, y_err)?;
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 64.0 * f64::EPSILON * mean.abs().max(1.0) {
        let zmin = z.iter().copied().fold(f64::INFINITY, f64::min);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w_sum: f64 = y_err.iter().map(|s| s.powi(-2)).sum();
        return Ok(GaussianFit {
            amplitude: 0.0,
            center: 0.5 * (zmin + zmax),
            width: zmax - zmin,
            offset: mean,
            sigmas: [
                f64::INFINITY,
                f64::INFINITY,
                f64::INFINITY,
                w_sum.sqrt().recip(),
            ],
            residual: y.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt(),
            chi2: 0.0,
            iterations: 0,
            flat: true,
        });
    }

    let mut p = initial_guess(z, y);
    let mut lambda = 1e-3;
    let (mut jtj, mut jtr, mut chi2) = normal_equations(z, y, y_err, &p);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut damped = jtj;
        for i in 0..4 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(f64::MIN_POSITIVE);
        }
        let Some(step) = damped.cholesky().map(|ch| ch.solve(&jtr)) else {
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                return Err(FitError::Singular);
            }
            continue;
        };
        let trial = p + step;
        let trial_chi2 = chi2_at(z, y, y_err, &trial);
        if trial_chi2.is_finite() && trial_chi2 <= chi2 {
            let relative = (0..4)
                .map(|i| step[i].abs() / trial[i].abs().max(1e-12))
                .fold(0.0, f64::max);
            p = trial;
            (jtj, jtr, chi2) = normal_equations(z, y, y_err, &p);
            lambda = (lambda / 10.0).max(1e-12);
            if relative < STEP_TOLERANCE {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            // No descent direction left at any damping: at the minimum.
            if lambda > LAMBDA_MAX {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(FitError::NotConverged(iterations));
    }
    p[2] = p[2].abs();
    let cov = jtj.try_inverse().ok_or(FitError::Singular)?;
    let sigmas = [0, 1, 2, 3].map(|i| cov[(i, i)].max(0.0).sqrt());
    let residual = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| (yi - model(&p, zi).0).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(GaussianFit {
        amplitude: p[0],
        center: p[1],
        width: p[2],
        offset: p[3],
        sigmas,
        residual,
        chi2,
        iterations,
        flat: false,
    })
}

/// Weighted linear fit of `A g(z) + B` with `g` a Gaussian of fixed center
/// and width.
pub fn fit_peak_amplitude(
    z: &[f64],
    y: &[f64],
    y_err: &[f64],
    center: f64,
    width: f64,
) -> Result<PeakAmplitudeFit, FitError> {
    check(z, y, y_err)?;
    if !(width > 0.0 && width.is_finite() && center.is_finite()) {
        return Err(FitError::InvalidInput);
    }
    let mut m = Matrix2::zeros();
    let mut v = Vector2::zeros();
    for ((&zi, &yi), &si) in z.iter().zip(y).zip(y_err) {
        let u = (zi - center) / width;
        let row = Vector2::new((-0.5 * u * u).exp(), 1.0) / si;
        m += row * row.transpose();
        v += row * (yi / si);
    }
    let cov = m.try_inverse().ok_or(FitError::Singular)?;
    let p = cov * v;
    Ok(PeakAmplitudeFit {
        amplitude: p[0],
        amplitude_sigma: cov[(0, 0)].sqrt(),
        offset: p[1],
        offset_sigma: cov[(1, 1)].sqrt(),
    })
}
