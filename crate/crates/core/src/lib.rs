//! Estimation for hierarchical Gaussian graphical models.
//!
//! Observed variables (columns of an `n x p` data matrix) are noisy replicates
//! of `K` latent group signals, and the latent signals follow a sparse Gaussian
//! graphical model with `K x K` precision matrix. This crate estimates the
//! grouping, the latent signals, the per-group noise variances and the sparse
//! precision matrix jointly by alternating conditional minimization.
//!
//! The crate is `no_std` (it needs `alloc`). The `parallel` feature pulls in
//! `std` and `rayon` and parallelizes restarts, grid points, replicates and
//! column-wise precision estimation; results do not depend on the schedule.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod clustering;
pub mod error;
pub mod model;
pub mod precision;
pub mod rng;
pub mod selection;
pub mod simbench;
pub mod solver;

mod par;

pub use error::{HgmError, Result};
pub use model::{DataMatrix, GroupAssignment, HgmState, HiddenSignals, NoiseVariances, PrecisionMatrix};
pub use solver::{Estimator, FitResult, FitTrace, ReassignMetric, SolverConfig};
