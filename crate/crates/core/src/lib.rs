//! Simulator for a programmable Mach-Zehnder interferometer mesh.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] builds 2×2 MZI transfer matrices (ideal and fabricated) and
//!   composes them over a rectangular lattice.
//! * [`disorder`] samples fabricated chips from a wafer-scale statistical model.
//! * [`fock`] evolves few-photon Fock states with matrix permanents.
//! * [`gates`] holds dual-rail encodings and nominal gate programs.
//! * [`tuner`] scores programs with the Hilbert-Schmidt process fidelity and
//!   re-optimises phase settings on a disordered chip.
//! * [`experiments`] drives iterative phase estimation and quantum-walk ensembles.
//! * [`config`], [`output`] and [`run`] are the run configuration, result files
//!   and command dispatch used by the command-line front end.

pub mod config;
pub mod disorder;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod gates;
pub mod mesh;
pub mod output;
pub mod qmc;
pub mod run;
pub mod stats;
pub mod tuner;

pub use disorder::{DisorderModel, InstanceSeed, MeshInstance};
pub use error::{Error, Result};
pub use fock::{CorrelationMatrix, FockState, PostSelectedTransform};
pub use gates::{DualRailEncoding, GateProgram, GateTarget, MeshRegion};
pub use mesh::{MeshTopology, MziAddress, MziPhysical, MziSettings, TransferMatrix};
pub use tuner::{FidelityScore, StudyResult, TuneOptions};

pub use num_complex::Complex64;

/// Dense complex matrix used throughout.
pub type CMatrix = ndarray::Array2<Complex64>;
