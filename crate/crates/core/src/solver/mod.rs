//! Linear solvers for the equilibrium equations.

pub mod direct;
pub mod linalg;
pub mod multigrid;

pub use direct::{direct_solve, DEFAULT_DIRECT_CAP};
pub use multigrid::{build_hierarchy, mgcg, MgcgOutcome, MultigridConfig, MultigridHierarchy, MultigridSetup, Prolongation};
