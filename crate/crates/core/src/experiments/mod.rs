//! Composite studies built on the gate and mesh layers.
//!
//! * [`ipea`]: iterative phase estimation, one controlled-phase interference
//!   experiment per bit, assembled from three separately tunable sections.
//! * [`walk`]: two-photon discrete-time quantum walks with static and
//!   layer-dependent phase disorder, averaged over realisations.

pub mod ipea;
pub mod walk;

pub use ipea::{build_ipea_iteration, run_ipea, run_ipea_ensemble, Aggregation, Composition, IpeaConfig, IpeaRun, IpeaSections};
pub use walk::{build_walk_program, run_walk_ensemble, WalkConfig, WalkEnsembleResult};
