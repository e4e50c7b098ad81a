//! Truncated four-mode bosonic Fock space.
//!
//! The lab frame is fixed to horizontal/vertical polarization on the two
//! spatial modes `k1` and `k2`, giving four bosonic modes. States live on a
//! finite basis bounded both per mode and in total photon number.

use std::collections::HashMap;
use std::fmt;
use std::ops::Index;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::polarization::PolarizationFrame;

/// Eigenvalues in `[-PSD_TOLERANCE, 0)` are treated as numerical drift.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Tolerance on `<psi|psi> = 1` for operations that require a normalized input.
pub const NORM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FockError {
    #[error("occupation {0} is outside the truncated basis")]
    OutsideTruncation(Occupation),
    #[error("truncation mismatch: {0} vs {1}")]
    TruncationMismatch(Truncation, Truncation),
    #[error("truncation overflow: dropped weight {0:.3e} exceeds the strict limit")]
    Overflow(f64),
    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("cannot normalize the zero vector")]
    ZeroNorm,
    #[error("density matrix has eigenvalue {0:.3e} below -1e-10")]
    NegativeEigenvalue(f64),
}

/// One of the four lab-frame modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    K1H,
    K1V,
    K2H,
    K2V,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::K1H, Mode::K1V, Mode::K2H, Mode::K2V];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn spatial(self) -> SpatialMode {
        match self {
            Mode::K1H | Mode::K1V => SpatialMode::K1,
            Mode::K2H | Mode::K2V => SpatialMode::K2,
        }
    }

    /// 0 for H, 1 for V.
    pub fn polarization_slot(self) -> usize {
        self.index() % 2
    }

    pub fn new(spatial: SpatialMode, slot: usize) -> Mode {
        Mode::ALL[spatial.offset() + (slot & 1)]
    }
}

/// Spatial mode: `K1` is the cloning channel, `K2` the anticloning channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpatialMode {
    K1,
    K2,
}

impl SpatialMode {
    pub fn offset(self) -> usize {
        match self {
            SpatialMode::K1 => 0,
            SpatialMode::K2 => 2,
        }
    }

    pub fn other(self) -> SpatialMode {
        match self {
            SpatialMode::K1 => SpatialMode::K2,
            SpatialMode::K2 => SpatialMode::K1,
        }
    }
}

/// Dual photon-number cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Truncation {
    pub per_mode: u32,
    pub total: u32,
}

impl Truncation {
    pub const fn new(per_mode: u32, total: u32) -> Self {
        Self { per_mode, total }
    }

    pub fn admits(&self, occ: &Occupation) -> bool {
        occ.0.iter().all(|&n| u32::from(n) <= self.per_mode) && occ.total() <= self.total
    }
}

impl Default for Truncation {
    /// Large enough that the truncation error of an evolved single-photon
    /// input at g = 0.1 stays below 1e-8 in every amplitude.
    fn default() -> Self {
        Self::new(9, 17)
    }
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(per_mode={}, total={})", self.per_mode, self.total)
    }
}

/// Photon numbers on (k1H, k1V, k2H, k2V).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Occupation(pub [u8; 4]);

impl Occupation {
    pub const VACUUM: Occupation = Occupation([0; 4]);

    pub fn new(k1h: u8, k1v: u8, k2h: u8, k2v: u8) -> Self {
        Self([k1h, k1v, k2h, k2v])
    }

    pub fn total(&self) -> u32 {
        self.0.iter().map(|&n| u32::from(n)).sum()
    }

    pub fn spatial_total(&self, spatial: SpatialMode) -> u32 {
        let o = spatial.offset();
        u32::from(self.0[o]) + u32::from(self.0[o + 1])
    }

    /// The (H, V) pair of one spatial mode.
    pub fn pair(&self, spatial: SpatialMode) -> [u8; 2] {
        let o = spatial.offset();
        [self.0[o], self.0[o + 1]]
    }

    pub fn from_pairs(k1: [u8; 2], k2: [u8; 2]) -> Self {
        Self([k1[0], k1[1], k2[0], k2[1]])
    }

    /// `n(k1) - n(k2)`, conserved by the pair-creation interaction.
    pub fn imbalance(&self) -> i32 {
        self.spatial_total(SpatialMode::K1) as i32 - self.spatial_total(SpatialMode::K2) as i32
    }

    pub fn with(&self, mode: Mode, n: u8) -> Self {
        let mut out = *self;
        out.0[mode.index()] = n;
        out
    }
}

impl Index<Mode> for Occupation {
    type Output = u8;
    fn index(&self, mode: Mode) -> &u8 {
        &self.0[mode.index()]
    }
}

impl fmt::Display for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "|{a},{b};{c},{d}>")
    }
}

/// All admissible occupations in lexicographic order of (n0, n1, n2, n3).
pub fn enumerate_basis(truncation: Truncation) -> Vec<Occupation> {
    let cap = truncation
        .per_mode
        .min(truncation.total)
        .min(u8::MAX as u32) as u8;
    let total = truncation.total;
    let mut out = Vec::new();
    for a in 0..=cap {
        for b in 0..=cap {
            for c in 0..=cap {
                for d in 0..=cap {
                    let occ = Occupation([a, b, c, d]);
                    if occ.total() <= total {
                        out.push(occ);
                    }
                }
            }
        }
    }
    out
}

/// Ordered basis with a reverse index.
#[derive(Debug)]
pub struct Basis {
    truncation: Truncation,
    tuples: Vec<Occupation>,
    index: HashMap<Occupation, usize>,
}

impl Basis {
    pub fn new(truncation: Truncation) -> Arc<Basis> {
        let tuples = enumerate_basis(truncation);
        let index = tuples.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        Arc::new(Basis {
            truncation,
            tuples,
            index,
        })
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[Occupation] {
        &self.tuples
    }

    pub fn index_of(&self, occ: &Occupation) -> Option<usize> {
        self.index.get(occ).copied()
    }

    pub fn get(&self, i: usize) -> Occupation {
        self.tuples[i]
    }
}

/// What to do with amplitude pushed outside the truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossPolicy {
    /// Drop it and report the weight.
    Report,
    /// Fail when the dropped weight exceeds `tolerance`.
    Strict { tolerance: f64 },
}

impl LossPolicy {
    /// Strict with zero tolerance: any dropped amplitude is an error.
    pub const fn strict() -> Self {
        LossPolicy::Strict { tolerance: 0.0 }
    }

    pub fn check(self, dropped_weight: f64) -> Result<(), FockError> {
        match self {
            LossPolicy::Strict { tolerance } if dropped_weight > tolerance => {
                Err(FockError::Overflow(dropped_weight))
            }
            _ => Ok(()),
        }
    }
}

/// Complex amplitudes over a truncated basis.
#[derive(Debug, Clone)]
pub struct StateVector {
    basis: Arc<Basis>,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn zero(basis: &Arc<Basis>) -> Self {
        Self {
            basis: Arc::clone(basis),
            amplitudes: vec![Complex64::new(0.0, 0.0); basis.len()],
        }
    }

    pub fn basis_state(basis: &Arc<Basis>, occ: Occupation) -> Result<Self, FockError> {
        let mut s = Self::zero(basis);
        s.set(occ, Complex64::new(1.0, 0.0))?;
        Ok(s)
    }

    pub fn vacuum(basis: &Arc<Basis>) -> Self {
        Self::basis_state(basis, Occupation::VACUUM).expect("vacuum is always admissible")
    }

    /// Sums the given components; every occupation must be admissible.
    pub fn from_components<I>(basis: &Arc<Basis>, components: I) -> Result<Self, FockError>
    where
        I: IntoIterator<Item = (Occupation, Complex64)>,
    {
        let mut s = Self::zero(basis);
        for (occ, c) in components {
            let i = basis
                .index_of(&occ)
                .ok_or(FockError::OutsideTruncation(occ))?;
            s.amplitudes[i] += c;
        }
        Ok(s)
    }

    pub fn from_amplitudes(basis: &Arc<Basis>, amplitudes: Vec<Complex64>) -> Self {
        assert_eq!(
            amplitudes.len(),
            basis.len(),
            "amplitude count must match basis"
        );
        Self {
            basis: Arc::clone(basis),
            amplitudes,
        }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn truncation(&self) -> Truncation {
        self.basis.truncation
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    /// Amplitude of `occ`; zero for tuples outside the truncation.
    pub fn amplitude(&self, occ: &Occupation) -> Complex64 {
        self.basis
            .index_of(occ)
            .map_or(Complex64::new(0.0, 0.0), |i| self.amplitudes[i])
    }

    pub fn set(&mut self, occ: Occupation, value: Complex64) -> Result<(), FockError> {
        let i = self
            .basis
            .index_of(&occ)
            .ok_or(FockError::OutsideTruncation(occ))?;
        self.amplitudes[i] = value;
        Ok(())
    }

    /// Nonzero components in basis order.
    pub fn iter(&self) -> impl Iterator<Item = (Occupation, Complex64)> + '_ {
        self.basis
            .tuples
            .iter()
            .zip(&self.amplitudes)
            .filter(|(_, c)| c.re != 0.0 || c.im != 0.0)
            .map(|(&o, &c)| (o, c))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(&self) -> Result<Self, FockError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(FockError::ZeroNorm);
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    pub fn ensure_normalized(&self, tolerance: f64) -> Result<(), FockError> {
        let n2 = self.norm_sqr();
        if (n2 - 1.0).abs() > tolerance {
            return Err(FockError::NotNormalized(n2));
        }
        Ok(())
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            basis: Arc::clone(&self.basis),
            amplitudes: self.amplitudes.iter().map(|a| a * c).collect(),
        }
    }

    fn check_same(&self, other: &Self) -> Result<(), FockError> {
        if self.truncation() != other.truncation() {
            return Err(FockError::TruncationMismatch(
                self.truncation(),
                other.truncation(),
            ));
        }
        Ok(())
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: Complex64, other: &Self) -> Result<Self, FockError> {
        self.check_same(other)?;
        Ok(Self {
            basis: Arc::clone(&self.basis),
            amplitudes: self
                .amplitudes
                .iter()
                .zip(&other.amplitudes)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, FockError> {
        self.check_same(other)?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Keeps only the components selected by `keep`.
    pub fn project(&self, keep: impl Fn(&Occupation) -> bool) -> Self {
        let amplitudes = self
            .basis
            .tuples
            .iter()
            .zip(&self.amplitudes)
            .map(|(o, &c)| if keep(o) { c } else { Complex64::new(0.0, 0.0) })
            .collect();
        Self {
            basis: Arc::clone(&self.basis),
            amplitudes,
        }
    }
}

/// Result of a ladder operation that may leave the truncated space.
#[derive(Debug, Clone)]
pub struct LadderOutput {
    pub state: StateVector,
    pub dropped_weight: f64,
}

/// `a_mode^dagger |state>`. Components pushed past the cutoff are dropped and
/// their weight reported.
pub fn apply_creation(
    state: &StateVector,
    mode: Mode,
    policy: LossPolicy,
) -> Result<LadderOutput, FockError> {
    let mut out = StateVector::zero(&state.basis);
    let mut dropped = 0.0;
    for (occ, c) in state.iter() {
        let n = occ[mode];
        let amp = c * ((f64::from(n) + 1.0).sqrt());
        let raised = n
            .checked_add(1)
            .map(|m| occ.with(mode, m))
            .and_then(|o| state.basis.index_of(&o));
        match raised {
            Some(j) => out.amplitudes[j] += amp,
            None => dropped += amp.norm_sqr(),
        }
    }
    policy.check(dropped)?;
    Ok(LadderOutput {
        state: out,
        dropped_weight: dropped,
    })
}

/// `a_mode |state>`.
pub fn apply_annihilation(state: &StateVector, mode: Mode) -> StateVector {
    let mut out = StateVector::zero(&state.basis);
    for (occ, c) in state.iter() {
        let n = occ[mode];
        if n == 0 {
            continue;
        }
        let lowered = occ.with(mode, n - 1);
        let j = state
            .basis
            .index_of(&lowered)
            .expect("lowering stays inside a downward-closed basis");
        out.amplitudes[j] += c * f64::from(n).sqrt();
    }
    out
}

/// `<a|b>`, conjugate-linear in `a`.
pub fn inner_product(a: &StateVector, b: &StateVector) -> Result<Complex64, FockError> {
    a.check_same(b)?;
    Ok(a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

/// Density operator on the support of a state in the full four-mode space.
///
/// Only occupations carrying nonzero amplitude in the source state are kept as
/// rows and columns; all other entries of the full matrix are zero.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    support: Vec<Occupation>,
    entries: DMatrix<Complex64>,
    success_probability: f64,
}

impl DensityMatrix {
    pub fn support(&self) -> &[Occupation] {
        &self.support
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn success_probability(&self) -> f64 {
        self.success_probability
    }

    pub fn with_success_probability(mut self, p: f64) -> Self {
        self.success_probability = p;
        self
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    /// Lab-frame `Tr(rho n_mode)`.
    pub fn number_expectation(&self, mode: Mode) -> f64 {
        self.support
            .iter()
            .enumerate()
            .map(|(i, o)| self.entries[(i, i)].re * f64::from(o[mode]))
            .sum()
    }

    pub fn von_neumann_entropy(&self) -> Result<f64, FockError> {
        von_neumann_entropy(&self.entries)
    }
}

/// `|psi><psi|` restricted to the support of `psi`. Fails if `psi` is not
/// normalized to within 1e-10.
pub fn density_from_pure(state: &StateVector) -> Result<DensityMatrix, FockError> {
    state.ensure_normalized(NORM_TOLERANCE)?;
    let (support, amps): (Vec<_>, Vec<_>) = state.iter().unzip();
    let n = support.len();
    let entries = DMatrix::from_fn(n, n, |i, j| amps[i] * amps[j].conj());
    Ok(DensityMatrix {
        support,
        entries,
        success_probability: 1.0,
    })
}

/// Reduced density operator of one spatial mode over its (H, V) occupations.
#[derive(Debug, Clone)]
pub struct ReducedDensityMatrix {
    spatial: SpatialMode,
    labels: Vec<[u8; 2]>,
    entries: DMatrix<Complex64>,
}

impl ReducedDensityMatrix {
    pub fn spatial(&self) -> SpatialMode {
        self.spatial
    }

    pub fn labels(&self) -> &[[u8; 2]] {
        &self.labels
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.entries)
    }

    pub fn von_neumann_entropy(&self) -> Result<f64, FockError> {
        von_neumann_entropy(&self.entries)
    }

    /// `Tr(rho n_total)` for this spatial mode.
    pub fn total_number(&self) -> f64 {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| self.entries[(i, i)].re * f64::from(l[0] + l[1]))
            .sum()
    }

    /// `Tr(rho a_e^dagger a_e)` where `a_e = conj(e_H) a_H + conj(e_V) a_V`
    /// annihilates a photon with polarization `e = (e_H, e_V)`.
    pub fn number_along(&self, e: [Complex64; 2]) -> f64 {
        let index: HashMap<[u8; 2], usize> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect();
        let (eh, ev) = (e[0], e[1]);
        let mut acc = Complex64::new(0.0, 0.0);
        // Tr(rho N) = sum_{ij} rho_ij N_ji, with N acting on column label j.
        for (j, &[h, v]) in self.labels.iter().enumerate() {
            let (hf, vf) = (f64::from(h), f64::from(v));
            let diag = eh.norm_sqr() * hf + ev.norm_sqr() * vf;
            acc += self.entries[(j, j)] * diag;
            // e_H conj(e_V) a_H^dag a_V : (h, v) -> (h+1, v-1)
            if v > 0 {
                if let Some(&i) = index.get(&[h + 1, v - 1]) {
                    acc += self.entries[(j, i)] * eh * ev.conj() * ((hf + 1.0) * vf).sqrt();
                }
            }
            // e_V conj(e_H) a_V^dag a_H : (h, v) -> (h-1, v+1)
            if h > 0 {
                if let Some(&i) = index.get(&[h - 1, v + 1]) {
                    acc += self.entries[(j, i)] * ev * eh.conj() * (hf * (vf + 1.0)).sqrt();
                }
            }
        }
        acc.re
    }

    /// `<v|rho|v>` for a vector given as lab-frame components of this mode.
    pub fn population(&self, vector: &[([u8; 2], Complex64)]) -> f64 {
        let index: HashMap<[u8; 2], usize> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for (li, ci) in vector {
            let Some(&i) = index.get(li) else { continue };
            for (lj, cj) in vector {
                let Some(&j) = index.get(lj) else { continue };
                acc += ci.conj() * self.entries[(i, j)] * cj;
            }
        }
        acc.re
    }

    /// Population of the Fock state with `psi` photons along the frame's
    /// first polarization and `perp` along its second.
    pub fn frame_population(&self, frame: &PolarizationFrame, psi: u8, perp: u8) -> f64 {
        self.population(&frame.fock_components(psi, perp))
    }
}

/// Traces out the spatial mode not in `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: SpatialMode) -> ReducedDensityMatrix {
    let traced = keep.other();
    let mut labels: Vec<[u8; 2]> = rho.support.iter().map(|o| o.pair(keep)).collect();
    labels.sort_unstable();
    labels.dedup();
    let index: HashMap<[u8; 2], usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    // Group support rows by the traced-out label.
    let mut groups: HashMap<[u8; 2], Vec<usize>> = HashMap::new();
    for (i, o) in rho.support.iter().enumerate() {
        groups.entry(o.pair(traced)).or_default().push(i);
    }

    let n = labels.len();
    let mut entries = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for rows in groups.values() {
        for &i in rows {
            let ri = index[&rho.support[i].pair(keep)];
            for &j in rows {
                let rj = index[&rho.support[j].pair(keep)];
                entries[(ri, rj)] += rho.entries[(i, j)];
            }
        }
    }
    ReducedDensityMatrix {
        spatial: keep,
        labels,
        entries,
    }
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    // Symmetrize against round-off before the decomposition.
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `-sum lambda log2 lambda` in bits, with `0 log 0 = 0`.
pub fn von_neumann_entropy(m: &DMatrix<Complex64>) -> Result<f64, FockError> {
    let mut s = 0.0;
    for lambda in hermitian_eigenvalues(m) {
        if lambda < -PSD_TOLERANCE {
            return Err(FockError::NegativeEigenvalue(lambda));
        }
        if lambda > 0.0 {
            s -= lambda * lambda.log2();
        }
    }
    Ok(s.max(0.0))
}
