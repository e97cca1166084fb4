//! Optimal fluctuation paths and prehistory densities for one-dimensional
//! discrete-time Markov jump processes with small jump scale `ε`.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: drifts, generalized-Gaussian jump laws, forward simulation;
//! * [`hamiltonian`]: `H`, `L`, Hamilton's equations and the action;
//! * [`nop`]: optimal paths by shooting, momentum scans, affine closed forms;
//! * [`oracle`]: closed-form Gaussian moments for affine drift;
//! * [`nppd`]: the lattice chain, its forward/backward recursions and the
//!   prehistory density;
//! * [`reversal`]: bridge chains, their sampling, limiting drifts and the
//!   small-noise concentration experiment.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*F64`
//! aliases below fix the common double-precision case.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hamiltonian;
pub mod model;
pub mod nop;
pub mod nppd;
pub mod oracle;
pub mod real;
pub mod reversal;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub use real::Real;

pub type DriftFunctionF64 = model::DriftFunction<f64>;
pub type JumpMeasureF64 = model::JumpMeasure<f64>;
pub type ModelSpecF64 = model::ModelSpec<f64>;
pub type PathSampleF64 = model::PathSample<f64>;
pub type HamiltonianModelF64 = hamiltonian::HamiltonianModel<f64>;
pub type PhaseTrajectoryF64 = hamiltonian::PhaseTrajectory<f64>;
pub type ShootingConfigF64 = nop::ShootingConfig<f64>;
pub type ShootingResultF64 = nop::ShootingResult<f64>;
pub type NopScanF64 = nop::NopScan<f64>;
pub type AffineGaussianModelF64 = oracle::AffineGaussianModel<f64>;
pub type BridgeMomentsF64 = oracle::BridgeMoments<f64>;
pub type GridF64 = nppd::Grid<f64>;
pub type TransitionMatrixF64 = nppd::TransitionMatrix<f64>;
pub type DensitySequenceF64 = nppd::DensitySequence<f64>;
pub type NppdFieldF64 = nppd::NppdField<f64>;
pub type HittingSequenceF64 = reversal::HittingSequence<f64>;

pub type ModelSpecF32 = model::ModelSpec<f32>;
pub type HamiltonianModelF32 = hamiltonian::HamiltonianModel<f32>;
pub type GridF32 = nppd::Grid<f32>;
pub type NppdFieldF32 = nppd::NppdField<f32>;
