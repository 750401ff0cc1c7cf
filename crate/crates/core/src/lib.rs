//! Deterministic multi-worker simulator for distributed optimization with
//! gradient clipping.
//!
//! The crate implements Clip-SGD, Clip21-SGD, the double-momentum method
//! Clip21-SGD2M (optionally with local Gaussian DP noise), the ideal-shift
//! variant of Clip21-SGD and a heavy-ball SGD baseline, all behind a single
//! step interface. Around the optimizers sit the counterexample problems,
//! non-convex logistic regression over LibSVM data, stochastic gradient
//! oracles, theory-driven parameter calibration with a privacy accountant,
//! run diagnostics, and an experiment harness.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`). The harness and
//! calibration routines work in `f64`; the aliases below name the common
//! concrete instantiations.

pub mod algorithms;
pub mod calibration;
pub mod clip;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod oracles;
pub mod problems;
pub mod rng;
pub mod scalar;
pub mod vector;

pub use algorithms::{Algorithm, HyperParams, OptimizerState, Simulation, WorkerState};
pub use clip::{clip, clip_residual_norm};
pub use diagnostics::RunRecord;
pub use error::{Error, Result};
pub use oracles::{GradientOracle, OracleKind};
pub use problems::{Problem, SparseDataset};
pub use rng::{Purpose, RngStream};
pub use scalar::Scalar;
pub use vector::DenseVector;

/// Double-precision vector, the default for all experiments.
pub type Vector = DenseVector<f64>;
/// Single-precision vector.
pub type Vector32 = DenseVector<f32>;
/// Double-precision optimizer state.
pub type State = OptimizerState<f64>;
/// Double-precision hyperparameters.
pub type Params = HyperParams<f64>;
/// Double-precision gradient oracle.
pub type Oracle = GradientOracle<f64>;
/// Double-precision sparse dataset.
pub type Dataset = SparseDataset<f64>;

/// Finite stand-in for an infinite clipping level. No realistic vector
/// reaches this norm, so clipping with it is always the identity.
pub const TAU_INFINITY: f64 = 1e18;
