//! High-order time discretizations for continuous-time policy evaluation.
//!
//! A diffusion `dX = b(X) dt + Λ^{1/2}(X) dB` with reward `r` and discount
//! rate `β` has value function `V(x) = ∫ e^{-βt} E[r(X_t) | X_0 = x] dt`.
//! This crate builds discrete-time surrogates for `V` from observations
//! spaced `η` apart:
//!
//! * a Bellman operator of order `n` whose reward integral is replaced by
//!   an exponentially weighted Lagrange interpolant ([`scheme::BellmanScheme`]),
//! * an order-`n` finite-difference approximation of the generator
//!   ([`scheme::GeneratorScheme`]),
//!
//! and solves their projected fixed points either at population level with
//! exact conditional expectations ([`exact`]) or from trajectory data with
//! LSTD-style linear systems ([`estimators`]). The [`harness`] module runs
//! step-size and data-size sweeps and fits convergence slopes.
//!
//! Data-parallel loops (grid assembly, window accumulation, batch
//! simulation, sweep cells) run on rayon when the `parallel` feature is on
//! and [`ExecMode::Parallel`] is requested. Without the feature every loop
//! falls back to the sequential path.

pub mod basis;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod exec;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod process;
pub mod quadrature;
pub mod scheme;

pub use basis::{FeatureMap, Family};
pub use error::{Error, Result};
pub use estimators::ValueApproximation;
pub use exec::ExecMode;
pub use linalg::{Matrix, SolveReport};
pub use process::{DiffusionModel, ModelSpec, Trajectory, TrajectoryBatch};
pub use scheme::{BellmanScheme, GeneratorScheme, Method};
