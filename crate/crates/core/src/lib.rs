//! Simulation of stochastic gradient-push for distributed strongly convex
//! optimization over time-varying directed graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] builds graph sequences, checks windowed strong connectivity
//!   and forms column-stochastic mixing matrices.
//! * [`spectral`] evaluates the consensus constants `delta` and `lambda`.
//! * [`pushsum`] runs perturbed push-sum and its disagreement bounds.
//! * [`objectives`] holds per-node objectives and noisy gradient oracles.
//! * [`optimizer`] couples the two into the gradient-push state machine.
//! * [`harness`] configures, runs and measures Monte Carlo experiments.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod graph;
pub mod harness;
pub mod objectives;
pub mod optimizer;
pub mod pushsum;
pub mod rng;
pub mod spectral;

pub use graph::{
    build_mixing_matrix, generate_alternating_stars, generate_cycle_plus_random,
    is_strongly_connected, verify_b_strong_connectivity, DirectedGraph, GraphError, GraphSequence,
    MixingMatrix,
};
pub use objectives::{NetworkObjective, ObjectiveSpec};
pub use optimizer::{OptimizerState, StepSchedule};
pub use pushsum::{consensus_residual, pushsum_step, PushSumState};
pub use spectral::{spectral_constants, SpectralConstants};
