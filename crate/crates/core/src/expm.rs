//! Matrix exponential by scaling and squaring of a truncated Taylor series.
//!
//! With `X` scaled so that `theta = max(||X/2^s||_1, ||X/2^s||_inf) <= 1/2`,
//! the Taylor tail after order `m` is bounded by
//! `theta^(m+1) / (m+1)! * 1 / (1 - theta/(m+2))`. The order is chosen so that
//! this bound, amplified by the `2^s` squarings, stays below the requested
//! tolerance.

use nalgebra::DMatrix;
use thiserror::Error;

pub const MAX_TAYLOR_ORDER: usize = 60;
const SCALED_NORM_TARGET: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpmError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("remainder bound {bound:.3e} above tolerance {tolerance:.3e} at order {order}")]
    RemainderTooLarge {
        bound: f64,
        tolerance: f64,
        order: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Expm {
    /// `ladder[k] = exp(X / 2^k)`; `ladder[0]` is the full exponential.
    pub ladder: Vec<DMatrix<f64>>,
    pub squarings: u32,
    pub order: usize,
    /// Bound on `||exp(X) - ladder[0]||_2` from series truncation.
    pub remainder_bound: f64,
}

impl Expm {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.ladder[0]
    }
}

fn induced_norm(x: &DMatrix<f64>) -> f64 {
    let col = x
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let row = x
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    col.max(row)
}

fn taylor_tail(theta: f64, order: usize) -> f64 {
    let mut term = 1.0;
    for k in 1..=order + 1 {
        term *= theta / k as f64;
    }
    term / (1.0 - theta / (order as f64 + 2.0))
}

/// `exp(x)` with at least `min_squarings` squaring steps, so the ladder always
/// holds `exp(x / 2^k)` for `k <= min_squarings`.
pub fn expm(x: &DMatrix<f64>, tolerance: f64, min_squarings: u32) -> Result<Expm, ExpmError> {
    let (n, m) = x.shape();
    if n != m {
        return Err(ExpmError::NotSquare(n, m));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ExpmError::NonFinite);
    }
    let norm = induced_norm(x);
    let mut squarings = min_squarings;
    if norm > 0.0 {
        let needed = (norm / SCALED_NORM_TARGET).log2().ceil();
        if needed > f64::from(squarings) {
            squarings = needed as u32;
        }
    }
    let scale = 0.5f64.powi(squarings as i32);
    let theta = norm * scale;
    let amplification = 2f64.powi(squarings as i32);

    let mut order = 1;
    let mut tail = taylor_tail(theta, order);
    while tail * amplification > tolerance && order < MAX_TAYLOR_ORDER {
        order += 1;
        tail = taylor_tail(theta, order);
    }
    // Error in one factor is at most `tail`; across 2^s factors of norm <= 1 + tail.
    let bound = amplification * tail * (1.0 + tail).powf(amplification - 1.0);
    if bound > tolerance {
        return Err(ExpmError::RemainderTooLarge {
            bound,
            tolerance,
            order,
        });
    }

    let xs = x * scale;
    let mut result = DMatrix::<f64>::identity(n, n);
    // Horner: I + X(I + X/2(I + X/3(...)))
    for k in (1..=order).rev() {
        result = DMatrix::identity(n, n) + (&xs * result) / k as f64;
    }

    let mut ladder = Vec::with_capacity(min_squarings as usize + 1);
    let keep_from = squarings - min_squarings;
    for step in 0..squarings {
        if step >= keep_from {
            ladder.push(result.clone());
        }
        result = &result * &result;
    }
    ladder.push(result);
    ladder.reverse();

    Ok(Expm {
        ladder,
        squarings,
        order,
        remainder_bound: bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_generator() {
        // exp([[0,-t],[t,0]]) is a rotation by t.
        for t in [0.0, 0.3, 2.0, 10.0] {
            let x = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
            let e = expm(&x, 1e-12, 3).unwrap();
            let want = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
            assert!((e.matrix() - &want).amax() < 1e-12, "t={t}");
            assert!(e.remainder_bound <= 1e-12);
            assert_eq!(e.ladder.len(), 4);
            let t8 = t / 8.0;
            let want8 = DMatrix::from_row_slice(2, 2, &[t8.cos(), -t8.sin(), t8.sin(), t8.cos()]);
            assert!((&e.ladder[3] - &want8).amax() < 1e-13);
        }
    }

    #[test]
    fn zero_is_identity() {
        let e = expm(&DMatrix::zeros(3, 3), 1e-12, 0).unwrap();
        assert_eq!(e.matrix(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn nilpotent_exact() {
        let x = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let e = expm(&x, 1e-14, 0).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert!((e.matrix() - want).amax() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            expm(&DMatrix::zeros(2, 3), 1e-12, 0),
            Err(ExpmError::NotSquare(2, 3))
        ));
        let x = DMatrix::from_element(2, 2, f64::NAN);
        assert_eq!(expm(&x, 1e-12, 0).unwrap_err(), ExpmError::NonFinite);
        // unreachable tolerance
        let x = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(matches!(
            expm(&x, 0.0, 0),
            Err(ExpmError::RemainderTooLarge { .. })
        ));
    }
}
