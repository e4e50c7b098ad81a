//! The SU(2)-invariant parametric amplifier.
//!
//! The interaction is `U(g) = exp(g (G - G^dag))` with
//! `G = a_H^dag b_V^dag - a_V^dag b_H^dag`, where `a` acts on spatial mode `k1`
//! and `b` on `k2`. For any qubit `Psi` this equals
//! `a_Psi^dag b_Perp^dag - a_Perp^dag b_Psi^dag`, so the lab-frame form needs no
//! knowledge of the injected polarization.
//!
//! `G` conserves `n(k1) - n(k2)`, so the truncated generator is block diagonal
//! and every block is exponentiated separately.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::expm::{expm, ExpmError};
use crate::fock::{Basis, FockError, LossPolicy, Mode, Occupation, StateVector, Truncation};
use crate::polarization::{PolarizationFrame, PolarizationQubit};

/// Gains above this are rejected unless a larger limit is requested.
pub const GAIN_LIMIT: f64 = 1.0;
/// Gains above this trigger a perturbative-validity warning.
pub const GAIN_WARNING: f64 = 0.3;
/// Taylor remainder tolerance used by [`Propagator`].
pub const EXPM_TOLERANCE: f64 = 1e-12;
/// Substeps used to integrate the truncation leakage rate.
const LEAKAGE_SUBSTEP_LOG2: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("truncation {0} too small: need per_mode >= 2 and total >= 3")]
    TruncationTooSmall(Truncation),
    #[error("gain {0} must be finite and non-negative")]
    InvalidGain(f64),
    #[error("gain {gain} exceeds the supported limit {limit}")]
    GainAboveLimit { gain: f64, limit: f64 },
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Expm(#[from] ExpmError),
}

/// Dimensionless gain `g = chi t`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
pub struct Gain(f64);

impl Gain {
    pub fn new(g: f64) -> Result<Self, ModelError> {
        Self::with_limit(g, GAIN_LIMIT)
    }

    pub fn with_limit(g: f64, limit: f64) -> Result<Self, ModelError> {
        if !g.is_finite() || g < 0.0 {
            return Err(ModelError::InvalidGain(g));
        }
        if g > limit {
            return Err(ModelError::GainAboveLimit { gain: g, limit });
        }
        if g > GAIN_WARNING {
            log::warn!("gain {g} is above {GAIN_WARNING}; first-order intuition and truncation error degrade");
        }
        Ok(Self(g))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Truncated matrix of `G - G^dag` (real and antisymmetric), stored sparsely.
#[derive(Debug)]
pub struct InteractionGenerator {
    basis: Arc<Basis>,
    entries: Vec<(usize, usize, f64)>,
    /// Couplings from basis states to states just outside the truncation.
    halo: Vec<(usize, usize, f64)>,
    halo_len: usize,
    sectors: BTreeMap<i32, Vec<usize>>,
}

/// Pair-creation terms of `G`: (k1 mode, k2 mode, sign).
const PAIR_TERMS: [(Mode, Mode, f64); 2] =
    [(Mode::K1H, Mode::K2V, 1.0), (Mode::K1V, Mode::K2H, -1.0)];

pub fn build_generator(truncation: Truncation) -> Result<InteractionGenerator, ModelError> {
    if truncation.per_mode < 2 || truncation.total < 3 {
        return Err(ModelError::TruncationTooSmall(truncation));
    }
    let basis = Basis::new(truncation);
    let mut entries = Vec::new();
    let mut halo = Vec::new();
    let mut halo_index: BTreeMap<Occupation, usize> = BTreeMap::new();
    let mut sectors: BTreeMap<i32, Vec<usize>> = BTreeMap::new();

    for (col, occ) in basis.tuples().iter().enumerate() {
        sectors.entry(occ.imbalance()).or_default().push(col);
        for (ma, mb, sign) in PAIR_TERMS {
            let (na, nb) = (occ[ma], occ[mb]);
            let value = sign * ((f64::from(na) + 1.0) * (f64::from(nb) + 1.0)).sqrt();
            let raised = occ.with(ma, na + 1).with(mb, nb + 1);
            match basis.index_of(&raised) {
                Some(row) => {
                    entries.push((row, col, value));
                    entries.push((col, row, -value));
                }
                None => {
                    let next = halo_index.len();
                    let h = *halo_index.entry(raised).or_insert(next);
                    halo.push((h, col, value));
                }
            }
        }
    }
    entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
    Ok(InteractionGenerator {
        basis,
        entries,
        halo_len: halo_index.len(),
        halo,
        sectors,
    })
}

impl InteractionGenerator {
    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn truncation(&self) -> Truncation {
        self.basis.truncation()
    }

    /// Nonzero `(row, col, value)` entries.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn element(&self, row: &Occupation, col: &Occupation) -> f64 {
        let (Some(r), Some(c)) = (self.basis.index_of(row), self.basis.index_of(col)) else {
            return 0.0;
        };
        self.entries
            .binary_search_by_key(&(r, c), |&(r, c, _)| (r, c))
            .map_or(0.0, |i| self.entries[i].2)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.basis.len();
        let mut m = DMatrix::zeros(n, n);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Basis indices grouped by the conserved imbalance `n(k1) - n(k2)`.
    pub fn sectors(&self) -> &BTreeMap<i32, Vec<usize>> {
        &self.sectors
    }

    fn block(&self, indices: &[usize]) -> DMatrix<f64> {
        let local: std::collections::HashMap<usize, usize> =
            indices.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let n = indices.len();
        let mut m = DMatrix::zeros(n, n);
        for &(r, c, v) in &self.entries {
            if let (Some(&i), Some(&j)) = (local.get(&r), local.get(&c)) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Norm of the part of `(G - G^dag) psi` that leaves the truncated space.
    pub fn leakage_rate(&self, state: &StateVector) -> f64 {
        let mut out = vec![Complex64::new(0.0, 0.0); self.halo_len];
        let amps = state.amplitudes();
        for &(h, c, v) in &self.halo {
            out[h] += amps[c] * v;
        }
        out.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn propagator(self: &Arc<Self>, gain: Gain) -> Propagator {
        let blocks = self.sectors.keys().map(|&k| (k, OnceLock::new())).collect();
        Propagator {
            generator: Arc::clone(self),
            gain,
            blocks,
        }
    }
}

#[derive(Debug)]
struct SectorPropagator {
    indices: Vec<usize>,
    full: DMatrix<f64>,
    substep: DMatrix<f64>,
    remainder_bound: f64,
}

impl SectorPropagator {
    fn apply(&self, m: &DMatrix<f64>, input: &[Complex64], out: &mut [Complex64]) {
        let re = DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|&i| input[i].re),
        );
        let im = DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|&i| input[i].im),
        );
        let (re, im) = (m * re, m * im);
        for (k, &i) in self.indices.iter().enumerate() {
            out[i] = Complex64::new(re[k], im[k]);
        }
    }
}

/// `exp(g (G - G^dag))` for a fixed gain; sector blocks are exponentiated on
/// first use and then shared.
#[derive(Debug)]
pub struct Propagator {
    generator: Arc<InteractionGenerator>,
    gain: Gain,
    blocks: BTreeMap<i32, OnceLock<Result<SectorPropagator, ExpmError>>>,
}

/// Output of [`Propagator::apply`].
#[derive(Debug, Clone)]
pub struct Evolution {
    pub state: StateVector,
    /// Series truncation bound of the exponential (2-norm).
    pub remainder_bound: f64,
    /// Estimated norm of the amplitude that the untruncated dynamics would
    /// have moved outside the basis.
    pub truncation_leakage: f64,
}

impl Propagator {
    pub fn gain(&self) -> Gain {
        self.gain
    }

    fn sector(&self, key: i32) -> Result<&SectorPropagator, ExpmError> {
        let cell = &self.blocks[&key];
        cell.get_or_init(|| {
            let indices = self.generator.sectors[&key].clone();
            let a = self.generator.block(&indices) * self.gain.value();
            let e = expm(&a, EXPM_TOLERANCE, LEAKAGE_SUBSTEP_LOG2)?;
            Ok(SectorPropagator {
                indices,
                substep: e.ladder[LEAKAGE_SUBSTEP_LOG2 as usize].clone(),
                full: e.ladder[0].clone(),
                remainder_bound: e.remainder_bound,
            })
        })
        .as_ref()
        .map_err(Clone::clone)
    }

    fn active_sectors(&self, state: &StateVector) -> Vec<i32> {
        let mut keys: Vec<i32> = state.iter().map(|(o, _)| o.imbalance()).collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    pub fn apply(&self, input: &StateVector) -> Result<Evolution, ModelError> {
        let t = self.generator.truncation();
        if input.truncation() != t {
            return Err(FockError::TruncationMismatch(input.truncation(), t).into());
        }
        let keys = self.active_sectors(input);
        let mut out = StateVector::zero(input.basis());
        let mut remainder_bound: f64 = 0.0;
        for &k in &keys {
            let s = self.sector(k)?;
            s.apply(&s.full, input.amplitudes(), out.amplitudes_mut());
            remainder_bound = remainder_bound.max(s.remainder_bound);
        }

        // Trapezoid-style upper sum of the leakage rate along the trajectory.
        let steps = 1usize << LEAKAGE_SUBSTEP_LOG2;
        let h = self.gain.value() / steps as f64;
        let mut current = input.clone();
        let mut rate = self.generator.leakage_rate(&current);
        let mut leakage = 0.0;
        for _ in 0..steps {
            let mut next = StateVector::zero(input.basis());
            for &k in &keys {
                let s = self.sector(k)?;
                s.apply(&s.substep, current.amplitudes(), next.amplitudes_mut());
            }
            let next_rate = self.generator.leakage_rate(&next);
            leakage += h * rate.max(next_rate);
            rate = next_rate;
            current = next;
        }

        Ok(Evolution {
            state: out,
            remainder_bound,
            truncation_leakage: leakage,
        })
    }
}

/// Which approximation of the output state to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    /// The three-term linearized output.
    First,
    /// Exact exponential on the truncated space.
    Full,
}

impl Order {
    pub fn label(self) -> &'static str {
        match self {
            Order::First => "first",
            Order::Full => "full",
        }
    }
}

/// Amplifier on a fixed truncation.
#[derive(Debug, Clone)]
pub struct Amplifier {
    generator: Arc<InteractionGenerator>,
}

impl Amplifier {
    pub fn new(truncation: Truncation) -> Result<Self, ModelError> {
        Ok(Self {
            generator: Arc::new(build_generator(truncation)?),
        })
    }

    pub fn generator(&self) -> &Arc<InteractionGenerator> {
        &self.generator
    }

    pub fn basis(&self) -> &Arc<Basis> {
        self.generator.basis()
    }

    pub fn truncation(&self) -> Truncation {
        self.generator.truncation()
    }

    pub fn propagator(&self, gain: Gain) -> Propagator {
        self.generator.propagator(gain)
    }

    pub fn vacuum(&self) -> StateVector {
        StateVector::vacuum(self.basis())
    }

    /// `alpha |1,0;0,0> + beta |0,1;0,0>`.
    pub fn prepare_injected(&self, qubit: &PolarizationQubit) -> StateVector {
        StateVector::from_components(
            self.basis(),
            [
                (Occupation::new(1, 0, 0, 0), qubit.alpha()),
                (Occupation::new(0, 1, 0, 0), qubit.beta()),
            ],
        )
        .expect("single-photon states fit any valid truncation")
    }

    /// `U(g) |input>`. Under a strict policy, fails if the estimated
    /// truncation leakage exceeds the tolerance.
    pub fn evolve(
        &self,
        input: &StateVector,
        gain: Gain,
        policy: LossPolicy,
    ) -> Result<Evolution, ModelError> {
        let ev = self.propagator(gain).apply(input)?;
        policy.check(ev.truncation_leakage)?;
        Ok(ev)
    }

    /// `|1,0;0,0> + g (sqrt2 |2,0;0,1> - |1,1;1,0>)` in (Psi, Psi_perp)
    /// labels, mapped to the lab frame. Not normalized.
    pub fn first_order_output(
        &self,
        qubit: &PolarizationQubit,
        gain: Gain,
    ) -> Result<StateVector, ModelError> {
        let g = gain.value();
        let labelled = StateVector::from_components(
            self.basis(),
            [
                (Occupation::new(1, 0, 0, 0), Complex64::new(1.0, 0.0)),
                (
                    Occupation::new(2, 0, 0, 1),
                    Complex64::new(2f64.sqrt() * g, 0.0),
                ),
                (Occupation::new(1, 1, 1, 0), Complex64::new(-g, 0.0)),
            ],
        )?;
        Ok(rotate_polarization(&labelled, qubit)?)
    }

    /// `|0,0;0,0> + g (|1,0;0,1> - |0,1;1,0>)`. The pair term is a polarization
    /// singlet, so the lab-frame form is the same for every qubit.
    pub fn vacuum_first_order_output(&self, gain: Gain) -> StateVector {
        let g = gain.value();
        StateVector::from_components(
            self.basis(),
            [
                (Occupation::VACUUM, Complex64::new(1.0, 0.0)),
                (Occupation::new(1, 0, 0, 1), Complex64::new(g, 0.0)),
                (Occupation::new(0, 1, 1, 0), Complex64::new(-g, 0.0)),
            ],
        )
        .expect("two-photon states fit a valid amplifier truncation")
    }

    /// Output state of an injected qubit at the requested order. The
    /// first-order state is returned unnormalized.
    pub fn injected_output(
        &self,
        qubit: &PolarizationQubit,
        gain: Gain,
        order: Order,
    ) -> Result<StateVector, ModelError> {
        match order {
            Order::First => self.first_order_output(qubit, gain),
            Order::Full => Ok(self
                .evolve(&self.prepare_injected(qubit), gain, LossPolicy::Report)?
                .state),
        }
    }
}

/// Applies the rotation H -> Psi, V -> Psi_perp on both spatial modes.
pub fn rotate_polarization(
    state: &StateVector,
    frame: impl Into<PolarizationFrame>,
) -> Result<StateVector, FockError> {
    frame.into().rotate(state)
}
