//! Topology optimization on structured grids with three equilibrium solvers:
//! a sparse direct factorization, multigrid-preconditioned conjugate gradients
//! (MGCG), and adaptive reduced-model reanalysis that combines a
//! combined-approximation basis with a projected approximate inverse built
//! from past displacement solutions.

pub mod error;
pub mod fe;
pub mod material;
pub mod optimizer;
pub mod reanalysis;
pub mod solver;

pub use error::{Error, Result};
