//! Desk-scale pipeline for learning ground-state properties from
//! randomized-measurement data.
//!
//! The crate covers four layers:
//!
//! * [`pauli`], [`state`], [`lanczos`]: parameterized spin Hamiltonians,
//!   sparse ground-state solves, and exact reduced-state properties.
//! * [`shadows`]: random-Pauli snapshot simulation and classical-shadow
//!   estimators for correlators, subsystem purity, and Rényi-2 entropy.
//! * [`dataset`]: hybrid datasets mixing a few heavily measured, labeled
//!   points with many lightly measured, unlabeled ones.
//! * [`learner`] and [`engine`]: lightweight regressors and the iterative
//!   self-labeling loop that grows a high-quality training set from
//!   consistency-checked model predictions, gated on validation R².
//!
//! Qubits carry 1-based labels; qubit 1 is the most significant bit of a
//! basis-state index.

pub mod dataset;
pub mod engine;
pub mod error;
pub mod lanczos;
pub mod learner;
pub mod par;
pub mod pauli;
pub mod rng;
pub mod shadows;
pub mod state;

pub use error::{Error, Result};
pub use lanczos::{ground_state, GroundState};
pub use pauli::{apply_hamiltonian, build_cluster_ising, build_xxz, HamiltonianSpec, PauliAxis, PauliString};
pub use shadows::{Basis, MeasurementRecord, PauliObservable, Task};
pub use state::{CorrAxis, QuantumState, SubsystemSpec};
