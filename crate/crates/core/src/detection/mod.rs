//! Monte Carlo model of the conditional four-fold coincidence experiment.
//!
//! Each trial is one heralded injection. With probability `epsilon(z)` the
//! injected photon overlaps the pump and the amplifier acts on it; otherwise
//! the amplifier sees vacuum and the injected photon leaves on `k1` in a
//! distinguishable temporal mode. The output is sampled by the Born rule in
//! the measurement frame of the injected qubit, routed through the
//! beam-splitter/analyzer network and detected by non-number-resolving
//! detectors of finite efficiency.

pub mod estimate;
pub mod fit;
pub mod oracle;
pub mod rng;
pub mod routing;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fock::{FockError, Occupation, Truncation};
use crate::metrics::MetricsError;
use crate::opa::{Amplifier, Gain, ModelError};
use crate::polarization::PolarizationQubit;

pub use estimate::{estimate_ratio, fidelity_from_counts, Estimate};
pub use fit::{
    fit_gaussian, fit_peak_amplitude, poisson_sigma, FitError, GaussianFit, PeakAmplitudeFit,
};
pub use oracle::ExpectedRates;
pub use routing::{route_and_detect, sample_occupation, OccupationSampler};

/// Default single-photon detector efficiency.
pub const DEFAULT_QE: f64 = 0.55;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("invalid setup: {0}")]
    InvalidSetup(String),
    #[error("state norm^2 {0} differs from 1 by more than 1e-8")]
    NotNormalized(f64),
    #[error("estimate undefined: C2 = 0")]
    UndefinedEstimate,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Which analyzer configuration is mounted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// PBS2 removed: all of `k2` on D2; `k1` analyzed after the 50:50 splitter.
    Cloning,
    /// PBS2 in place: `k2` split into Perp (D2) and Psi (D2*); `k1` unanalyzed.
    UNot,
}

impl MeasurementMode {
    pub fn label(self) -> &'static str {
        match self {
            MeasurementMode::Cloning => "cloning",
            MeasurementMode::UNot => "unot",
        }
    }

    /// Detector sets whose four-fold coincidences give C1 and C2.
    pub fn coincidence_sets(self) -> ([Detector; 4], [Detector; 4]) {
        use Detector::*;
        match self {
            MeasurementMode::Cloning => ([D2, Trigger, Da, Db], [D2, Trigger, Da, DbStar]),
            MeasurementMode::UNot => ([D2, Trigger, Da, Db], [D2Star, Trigger, Da, Db]),
        }
    }

    pub fn detectors(self) -> &'static [Detector] {
        use Detector::*;
        match self {
            MeasurementMode::Cloning => &[Trigger, D2, Da, Db, DbStar],
            MeasurementMode::UNot => &[Trigger, D2, D2Star, Da, Db],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    Trigger,
    D2,
    D2Star,
    Da,
    Db,
    DbStar,
}

impl Detector {
    pub const ALL: [Detector; 6] = [
        Detector::Trigger,
        Detector::D2,
        Detector::D2Star,
        Detector::Da,
        Detector::Db,
        Detector::DbStar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which detectors fired in one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClickPattern {
    clicks: [bool; 6],
}

impl ClickPattern {
    pub fn set(&mut self, d: Detector) {
        self.clicks[d.index()] = true;
    }

    pub fn clicked(&self, d: Detector) -> bool {
        self.clicks[d.index()]
    }

    pub fn all(&self, ds: &[Detector]) -> bool {
        ds.iter().all(|&d| self.clicked(d))
    }

    pub fn any(&self) -> bool {
        self.clicks.iter().any(|&c| c)
    }
}

/// Per-detector quantum efficiencies. The trigger is a perfect herald and
/// has no entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorEfficiencies {
    pub d2: f64,
    pub d2_star: f64,
    pub da: f64,
    pub db: f64,
    pub db_star: f64,
}

impl DetectorEfficiencies {
    pub fn uniform(qe: f64) -> Self {
        Self {
            d2: qe,
            d2_star: qe,
            da: qe,
            db: qe,
            db_star: qe,
        }
    }

    pub fn get(&self, d: Detector) -> f64 {
        match d {
            Detector::Trigger => 1.0,
            Detector::D2 => self.d2,
            Detector::D2Star => self.d2_star,
            Detector::Da => self.da,
            Detector::Db => self.db,
            Detector::DbStar => self.db_star,
        }
    }

    fn validate(&self) -> Result<(), DetectionError> {
        for d in Detector::ALL {
            let q = self.get(d);
            if !(0.0..=1.0).contains(&q) {
                return Err(DetectionError::InvalidSetup(format!(
                    "efficiency of {d:?} must lie in [0, 1], got {q}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for DetectorEfficiencies {
    fn default() -> Self {
        Self::uniform(DEFAULT_QE)
    }
}

/// Fate of the injected photon when it misses the pump pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnmatchedPhoton {
    /// It still reaches `k1`, distinguishable from the amplifier output, and
    /// the trigger still fires.
    Distinguishable,
    /// The trial carries no injected photon and the trigger stays dark.
    Absent,
}

/// Pump/injection overlap as a function of the mirror position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionModel {
    pub z: f64,
    pub z0: f64,
    pub sigma_z: f64,
    pub p_peak: f64,
    pub unmatched: UnmatchedPhoton,
}

impl InjectionModel {
    /// `p_peak exp(-(z - z0)^2 / (2 sigma_z^2))`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon_at(self.z)
    }

    pub fn epsilon_at(&self, z: f64) -> f64 {
        let d = (z - self.z0) / self.sigma_z;
        self.p_peak * (-0.5 * d * d).exp()
    }

    pub fn at(&self, z: f64) -> Self {
        Self { z, ..*self }
    }

    fn validate(&self) -> Result<(), DetectionError> {
        if !(self.sigma_z > 0.0 && self.sigma_z.is_finite()) {
            return Err(DetectionError::InvalidSetup(format!(
                "sigma_z must be positive, got {}",
                self.sigma_z
            )));
        }
        if !(0.0..=1.0).contains(&self.p_peak) {
            return Err(DetectionError::InvalidSetup(format!(
                "p_peak must lie in [0, 1], got {}",
                self.p_peak
            )));
        }
        if !self.z.is_finite() || !self.z0.is_finite() {
            return Err(DetectionError::InvalidSetup(
                "z and z0 must be finite".into(),
            ));
        }
        Ok(())
    }
}

impl Default for InjectionModel {
    fn default() -> Self {
        Self {
            z: 0.0,
            z0: 0.0,
            sigma_z: 1.0,
            p_peak: 1.0,
            unmatched: UnmatchedPhoton::Distinguishable,
        }
    }
}

/// Whether coincidences require the trigger detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMode {
    Required,
    /// Diagnostic mode: D_T is dropped from the coincidence sets.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetup {
    pub mode: MeasurementMode,
    pub qubit: PolarizationQubit,
    pub gain: Gain,
    pub efficiencies: DetectorEfficiencies,
    pub injection: InjectionModel,
    pub trigger: TriggerMode,
    pub trials: u64,
    pub master_seed: u64,
    pub truncation: Truncation,
}

impl ExperimentSetup {
    pub fn new(mode: MeasurementMode, qubit: PolarizationQubit, gain: Gain) -> Self {
        Self {
            mode,
            qubit,
            gain,
            efficiencies: DetectorEfficiencies::default(),
            injection: InjectionModel::default(),
            trigger: TriggerMode::Required,
            trials: 1,
            master_seed: 0,
            truncation: Truncation::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.trials == 0 {
            return Err(DetectionError::InvalidSetup(
                "trials must be at least 1".into(),
            ));
        }
        self.efficiencies.validate()?;
        self.injection.validate()
    }
}

/// Tallies of one run. Merging is associative and commutative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceCounts {
    pub mode: MeasurementMode,
    pub c1: u64,
    pub c2: u64,
    pub trials_run: u64,
    /// Single-detector click counts indexed by [`Detector::index`].
    pub singles: [u64; 6],
}

impl CoincidenceCounts {
    pub fn empty(mode: MeasurementMode) -> Self {
        Self {
            mode,
            c1: 0,
            c2: 0,
            trials_run: 0,
            singles: [0; 6],
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        debug_assert_eq!(self.mode, other.mode);
        self.c1 += other.c1;
        self.c2 += other.c2;
        self.trials_run += other.trials_run;
        for (a, b) in self.singles.iter_mut().zip(other.singles) {
            *a += b;
        }
        self
    }

    pub fn single(&self, d: Detector) -> u64 {
        self.singles[d.index()]
    }

    fn record(
        &mut self,
        clicks: &ClickPattern,
        sets: &([Detector; 4], [Detector; 4]),
        trigger: TriggerMode,
    ) {
        self.trials_run += 1;
        for d in Detector::ALL {
            if clicks.clicked(d) {
                self.singles[d.index()] += 1;
            }
        }
        let hit = |set: &[Detector; 4]| {
            set.iter().all(|&d| {
                (d == Detector::Trigger && trigger == TriggerMode::Ignored) || clicks.clicked(d)
            })
        };
        if hit(&sets.0) {
            self.c1 += 1;
        }
        if hit(&sets.1) {
            self.c2 += 1;
        }
    }
}

/// Output distributions prepared once per (qubit, gain) and shared by all
/// trials.
#[derive(Debug, Clone)]
pub struct Experiment {
    setup: ExperimentSetup,
    matched: OccupationSampler,
    vacuum: OccupationSampler,
}

impl Experiment {
    pub fn prepare(setup: &ExperimentSetup) -> Result<Self, DetectionError> {
        setup.validate()?;
        let amp = Amplifier::new(setup.truncation)?;
        let propagator = amp.propagator(setup.gain);
        // Wave plates rotate Psi onto the analyzers' first port.
        let to_frame = setup.qubit.frame().inverse();
        let injected = propagator.apply(&amp.prepare_injected(&setup.qubit))?.state;
        let vacuum = propagator.apply(&amp.vacuum())?.state;
        Ok(Self {
            setup: setup.clone(),
            matched: OccupationSampler::new(&to_frame.rotate(&injected)?)?,
            vacuum: OccupationSampler::new(&to_frame.rotate(&vacuum)?)?,
        })
    }

    pub fn setup(&self) -> &ExperimentSetup {
        &self.setup
    }

    pub fn matched_distribution(&self) -> &OccupationSampler {
        &self.matched
    }

    pub fn vacuum_distribution(&self) -> &OccupationSampler {
        &self.vacuum
    }

    fn trial(&self, epsilon: f64, seed: u64, index: u64) -> ClickPattern {
        let mut rng = rng::trial_stream(seed, index);
        let (occ, heralded) = if rng.random::<f64>() < epsilon {
            (self.matched.sample(&mut rng), true)
        } else {
            let occ = self.vacuum.sample(&mut rng);
            match self.setup.injection.unmatched {
                UnmatchedPhoton::Distinguishable => (with_injected_photon(occ), true),
                UnmatchedPhoton::Absent => (occ, false),
            }
        };
        route_and_detect(
            &occ,
            self.setup.mode,
            &self.setup.efficiencies,
            heralded,
            &mut rng,
        )
    }

    /// Runs `trials` trials at overlap `epsilon`, seeded by `seed`.
    pub fn run(&self, epsilon: f64, trials: u64, seed: u64) -> CoincidenceCounts {
        let mode = self.setup.mode;
        let sets = mode.coincidence_sets();
        let trigger = self.setup.trigger;
        (0..trials)
            .into_par_iter()
            .fold(
                || CoincidenceCounts::empty(mode),
                |mut acc, i| {
                    acc.record(&self.trial(epsilon, seed, i), &sets, trigger);
                    acc
                },
            )
            .reduce(|| CoincidenceCounts::empty(mode), CoincidenceCounts::merge)
    }

    /// Exact per-trial coincidence probabilities at overlap `epsilon`.
    pub fn expected_rates(&self, epsilon: f64) -> ExpectedRates {
        oracle::expected_rates(self, epsilon)
    }
}

/// Adds the unamplified injected photon (Psi on `k1`) to an occupation.
pub(crate) fn with_injected_photon(mut occ: Occupation) -> Occupation {
    occ.0[0] += 1;
    occ
}

pub fn run_trials(setup: &ExperimentSetup) -> Result<CoincidenceCounts, DetectionError> {
    let exp = Experiment::prepare(setup)?;
    Ok(exp.run(setup.injection.epsilon(), setup.trials, setup.master_seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub z: f64,
    pub epsilon: f64,
    pub counts: CoincidenceCounts,
}

/// Runs `setup.trials` trials at every mirror position. Point `k` is seeded
/// with `derive_seed(master_seed, k)`.
pub fn z_scan(setup: &ExperimentSetup, z_values: &[f64]) -> Result<Vec<ScanPoint>, DetectionError> {
    if z_values.is_empty() {
        return Err(DetectionError::InvalidSetup(
            "z scan needs at least one position".into(),
        ));
    }
    let exp = Experiment::prepare(setup)?;
    Ok(z_values
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let epsilon = setup.injection.epsilon_at(z);
            let seed = rng::derive_seed(setup.master_seed, k as u64);
            ScanPoint {
                z,
                epsilon,
                counts: exp.run(epsilon, setup.trials, seed),
            }
        })
        .collect())
}
