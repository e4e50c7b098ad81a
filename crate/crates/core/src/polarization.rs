//! Polarization qubits and the Fock-space action of polarization rotations.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fock::{FockError, Occupation, SpatialMode, StateVector};

pub const QUBIT_NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QubitError {
    #[error("qubit norm^2 {0} differs from 1 by more than 1e-12")]
    NotNormalized(f64),
    #[error("qubit amplitudes must be finite and not both zero")]
    Degenerate,
}

/// `|Psi> = alpha |H> + beta |V>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationQubit {
    alpha: Complex64,
    beta: Complex64,
}

impl PolarizationQubit {
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self, QubitError> {
        let n2 = alpha.norm_sqr() + beta.norm_sqr();
        if !n2.is_finite() {
            return Err(QubitError::Degenerate);
        }
        if (n2 - 1.0).abs() > QUBIT_NORM_TOLERANCE {
            return Err(QubitError::NotNormalized(n2));
        }
        Ok(Self { alpha, beta })
    }

    /// Rescales `(alpha, beta)` to unit norm.
    pub fn normalized(alpha: Complex64, beta: Complex64) -> Result<Self, QubitError> {
        let n = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(QubitError::Degenerate);
        }
        Ok(Self {
            alpha: alpha / n,
            beta: beta / n,
        })
    }

    pub fn horizontal() -> Self {
        Self {
            alpha: Complex64::new(1.0, 0.0),
            beta: Complex64::new(0.0, 0.0),
        }
    }

    pub fn vertical() -> Self {
        Self {
            alpha: Complex64::new(0.0, 0.0),
            beta: Complex64::new(1.0, 0.0),
        }
    }

    /// `(|H> + |V>)/sqrt 2`.
    pub fn diagonal() -> Self {
        Self {
            alpha: Complex64::new(FRAC_1_SQRT_2, 0.0),
            beta: Complex64::new(FRAC_1_SQRT_2, 0.0),
        }
    }

    /// `(|H> + i|V>)/sqrt 2`.
    pub fn circular_left() -> Self {
        Self {
            alpha: Complex64::new(FRAC_1_SQRT_2, 0.0),
            beta: Complex64::new(0.0, FRAC_1_SQRT_2),
        }
    }

    /// The three injected states of the reference experiment, with labels.
    pub fn reference_states() -> [(&'static str, Self); 3] {
        [
            ("H", Self::horizontal()),
            ("diag", Self::diagonal()),
            ("circ-left", Self::circular_left()),
        ]
    }

    /// Uniform (Haar) sample on the Bloch sphere.
    pub fn haar_random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let cos_theta: f64 = rng.random_range(-1.0..=1.0);
        let theta = cos_theta.acos();
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let global: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let g = Complex64::from_polar(1.0, global);
        Self {
            alpha: g * (theta / 2.0).cos(),
            beta: g * Complex64::from_polar((theta / 2.0).sin(), phi),
        }
    }

    pub fn alpha(&self) -> Complex64 {
        self.alpha
    }

    pub fn beta(&self) -> Complex64 {
        self.beta
    }

    /// `|Psi_perp> = -conj(beta)|H> + conj(alpha)|V>`.
    pub fn orthogonal(&self) -> Self {
        Self {
            alpha: -self.beta.conj(),
            beta: self.alpha.conj(),
        }
    }

    pub fn components(&self) -> [Complex64; 2] {
        [self.alpha, self.beta]
    }

    pub fn frame(&self) -> PolarizationFrame {
        PolarizationFrame::from(*self)
    }
}

/// An orthonormal polarization pair `(Psi, Psi_perp)`, stored as the unitary
/// whose columns are the two polarization vectors in H/V coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationFrame {
    u: [[Complex64; 2]; 2],
}

impl PolarizationFrame {
    pub fn identity() -> Self {
        PolarizationQubit::horizontal().frame()
    }

    /// Same frame with `Psi_perp` multiplied by `exp(i phi)`.
    pub fn with_perp_phase(&self, phi: f64) -> Self {
        let p = Complex64::from_polar(1.0, phi);
        let mut u = self.u;
        u[0][1] *= p;
        u[1][1] *= p;
        Self { u }
    }

    /// Polarization vector `(e_H, e_V)` of slot 0 (`Psi`) or 1 (`Psi_perp`).
    pub fn vector(&self, slot: usize) -> [Complex64; 2] {
        [self.u[0][slot], self.u[1][slot]]
    }

    pub fn psi(&self) -> [Complex64; 2] {
        self.vector(0)
    }

    pub fn perp(&self) -> [Complex64; 2] {
        self.vector(1)
    }

    pub fn inverse(&self) -> Self {
        let u = self.u;
        Self {
            u: [
                [u[0][0].conj(), u[1][0].conj()],
                [u[0][1].conj(), u[1][1].conj()],
            ],
        }
    }

    /// Lab-frame expansion of `|psi, perp>` (photons along `Psi` and
    /// `Psi_perp`) as `((n_H, n_V), amplitude)` pairs.
    pub fn fock_components(&self, psi: u8, perp: u8) -> Vec<([u8; 2], Complex64)> {
        let [e0h, e0v] = self.psi();
        let [e1h, e1v] = self.perp();
        let (h, v) = (usize::from(psi), usize::from(perp));
        let n = h + v;
        let mut coeff = vec![Complex64::new(0.0, 0.0); n + 1];
        // (e0h x + e0v y)^h (e1h x + e1v y)^v, indexed by the power of x.
        for i in 0..=h {
            let a = binomial(h, i) * e0h.powu(i as u32) * e0v.powu((h - i) as u32);
            for j in 0..=v {
                let b = binomial(v, j) * e1h.powu(j as u32) * e1v.powu((v - j) as u32);
                coeff[i + j] += a * b;
            }
        }
        let norm = 1.0 / (factorial(h) * factorial(v)).sqrt();
        coeff
            .into_iter()
            .enumerate()
            .filter(|(_, c)| c.norm_sqr() > 0.0)
            .map(|(p, c)| {
                let q = n - p;
                let lab = [p as u8, q as u8];
                (lab, c * norm * (factorial(p) * factorial(q)).sqrt())
            })
            .collect()
    }

    /// Applies the frame's rotation (H -> Psi, V -> Psi_perp) identically on
    /// both spatial modes. Fails if amplitude would land outside the basis.
    pub fn rotate(&self, state: &StateVector) -> Result<StateVector, FockError> {
        let mut out = StateVector::zero(state.basis());
        let basis = state.basis().clone();
        let mut cache: std::collections::HashMap<[u8; 2], Vec<([u8; 2], Complex64)>> =
            std::collections::HashMap::new();
        for (occ, c) in state.iter() {
            let k1 = occ.pair(SpatialMode::K1);
            let k2 = occ.pair(SpatialMode::K2);
            let e1 = cache
                .entry(k1)
                .or_insert_with(|| self.fock_components(k1[0], k1[1]))
                .clone();
            let e2 = cache
                .entry(k2)
                .or_insert_with(|| self.fock_components(k2[0], k2[1]))
                .clone();
            for (l1, c1) in &e1 {
                for (l2, c2) in &e2 {
                    let target = Occupation::from_pairs(*l1, *l2);
                    let amp = c * c1 * c2;
                    match basis.index_of(&target) {
                        Some(j) => out.amplitudes_mut()[j] += amp,
                        None if amp.norm_sqr() > 0.0 => {
                            return Err(FockError::OutsideTruncation(target))
                        }
                        None => {}
                    }
                }
            }
        }
        Ok(out)
    }
}

impl From<PolarizationQubit> for PolarizationFrame {
    fn from(q: PolarizationQubit) -> Self {
        let p = q.orthogonal();
        Self {
            u: [[q.alpha, p.alpha], [q.beta, p.beta]],
        }
    }
}

impl From<&PolarizationQubit> for PolarizationFrame {
    fn from(q: &PolarizationQubit) -> Self {
        PolarizationFrame::from(*q)
    }
}

impl From<&PolarizationFrame> for PolarizationFrame {
    fn from(f: &PolarizationFrame) -> Self {
        *f
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
