//! Quantum illumination of a target that absorbs part of the probe light.
//!
//! The crate builds the two hypotheses (target absent / present) for a
//! coherent-state probe and a two-mode squeezed vacuum probe, evaluates
//! quantum Chernoff bounds on the discrimination error in the Gaussian
//! formalism, checks them against a truncated Fock-space computation, and
//! optimizes probe photon statistics in the perturbative regime.

pub mod chernoff;
pub mod error;
pub mod fock;
pub mod gaussian;
pub mod probe;
pub mod target;

pub use chernoff::{
    chernoff_bound, chernoff_coherent, chernoff_tmsv, minimize_s, quantum_advantage, AdvantageResult, ChernoffResult,
    GaussianOverlap,
};
pub use error::{Error, Result};
pub use fock::{oracle_bound, FockCutoffs, FockDensityMatrix};
pub use gaussian::{GaussianState, SymplecticOp, Williamson};
pub use probe::{OptimalProbe, OptimizerOptions, PerturbativeBound};
pub use target::{Probe, TargetParams};
