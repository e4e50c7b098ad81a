//! Reference solutions built without the library's generator or exponential.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type Tuple = [u8; 4];

/// Exact output amplitudes for an H photon injected into the untruncated
/// amplifier. The interaction splits into two commuting two-mode squeezers,
/// `(k1H, k2V)` at gain `g` and `(k1V, k2H)` at gain `-g`, so
/// `<n+1, m; m, n| U |1,0;0,0> = sqrt(n+1) t^n (-t)^m / cosh^3 g`.
pub fn injected_h_amplitude(g: f64, occ: Tuple) -> f64 {
    let [a, b, c, d] = occ.map(i32::from);
    if a != d + 1 || b != c {
        return 0.0;
    }
    let t = g.tanh();
    f64::from(d + 1).sqrt() * t.powi(d) * (-t).powi(c) / g.cosh().powi(3)
}

/// Exact vacuum output: `<n, m; m, n| U |0> = t^n (-t)^m / cosh^2 g`.
pub fn vacuum_amplitude(g: f64, occ: Tuple) -> f64 {
    let [a, b, c, d] = occ.map(i32::from);
    if a != d || b != c {
        return 0.0;
    }
    let t = g.tanh();
    t.powi(d) * (-t).powi(c) / g.cosh().powi(2)
}

/// Tuples of the photon-number-difference sector `delta` within the cutoffs.
pub fn sector_basis(per_mode: u8, total: u32, delta: i32) -> Vec<Tuple> {
    let mut out = Vec::new();
    for a in 0..=per_mode {
        for b in 0..=per_mode {
            for c in 0..=per_mode {
                for d in 0..=per_mode {
                    let n = u32::from(a) + u32::from(b) + u32::from(c) + u32::from(d);
                    let imbalance = i32::from(a) + i32::from(b) - i32::from(c) - i32::from(d);
                    if n <= total && imbalance == delta {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
    }
    out
}

/// `exp(g (G - G^dag))` on one sector by eigendecomposition of the
/// Hermitian matrix `i g (G - G^dag)`, applied to `input`.
pub fn dense_sector_evolution(
    per_mode: u8,
    total: u32,
    g: f64,
    input: &[(Tuple, Complex64)],
) -> HashMap<Tuple, Complex64> {
    let delta = {
        let [a, b, c, d] = input[0].0.map(i32::from);
        a + b - c - d
    };
    let basis = sector_basis(per_mode, total, delta);
    let index: HashMap<Tuple, usize> = basis.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let n = basis.len();
    // G = a+_H b+_V - a+_V b+_H
    let mut gen = DMatrix::<f64>::zeros(n, n);
    for (j, &[a, b, c, d]) in basis.iter().enumerate() {
        let up = [a + 1, b, c, d + 1];
        if let Some(&i) = index.get(&up) {
            gen[(i, j)] += (f64::from(a + 1) * f64::from(d + 1)).sqrt();
        }
        let up = [a, b + 1, c + 1, d];
        if let Some(&i) = index.get(&up) {
            gen[(i, j)] -= (f64::from(b + 1) * f64::from(c + 1)).sqrt();
        }
    }
    let k = (&gen - gen.transpose()) * g;
    let i = Complex64::new(0.0, 1.0);
    let h: DMatrix<Complex64> = k.map(|x| i * x);
    let eig = h.symmetric_eigen();
    let v = &eig.eigenvectors;
    let phases = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| (-i * l).exp()));
    let mut psi = DVector::<Complex64>::zeros(n);
    for &(t, amp) in input {
        psi[index[&t]] += amp;
    }
    let coeffs = v.adjoint() * psi;
    let out = v * coeffs.component_mul(&phases);
    basis.into_iter().zip(out.iter().copied()).collect()
}

/// Observed convergence order from errors at two step sizes.
pub fn observed_order(h1: f64, e1: f64, h2: f64, e2: f64) -> f64 {
    (e2 / e1).ln() / (h2 / h1).ln()
}
