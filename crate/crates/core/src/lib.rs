//! Simulator of a quantum-injected optical parametric amplifier used as a
//! 1 -> 2 universal cloner on one output mode and a universal NOT gate on the
//! other.
//!
//! - [`fock`]: truncated four-mode Fock space, density matrices, entropy.
//! - [`opa`]: the amplifier interaction and its exact and linearized outputs.
//! - [`metrics`]: cloning and U-NOT fidelities, signal-to-noise ratios.
//! - [`detection`]: Monte Carlo coincidence experiment and peak fitting.
//! - [`cli`]: configuration, named experiments and report output.

pub mod cli;
pub mod detection;
pub mod expm;
pub mod fock;
pub mod metrics;
pub mod opa;
pub mod polarization;

pub use fock::{Basis, Mode, Occupation, SpatialMode, StateVector, Truncation};
pub use opa::{Amplifier, Gain, Order};
pub use polarization::{PolarizationFrame, PolarizationQubit};
