//! Mean-field simulation of a two-dimensional exciton-polariton fluid driven
//! by two counter-propagating coherent pumps.
//!
//! The crate integrates the coupled photon/exciton driven-dissipative
//! Gross–Pitaevskii equations with a split-step Fourier scheme, evaluates
//! coherence, energy and topological diagnostics, labels the dynamical regime
//! and drives parameter sweeps over pump amplitude and detuning.

pub mod classify;
pub mod config;
pub mod converge;
pub mod drive;
pub mod grid;
pub mod io;
pub mod observables;
pub mod pipeline;
pub mod solver;
pub mod sweep;
pub mod units;

pub use drive::{DisorderSpec, Drive, PumpSpec};
pub use grid::{FieldPair, Grid2D, Roi};
pub use solver::{Solver, SolverConfig};
pub use units::ModelParams;
