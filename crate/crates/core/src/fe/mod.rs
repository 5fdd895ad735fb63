//! Structured-grid finite elements: lattice and DOF bookkeeping, element
//! matrices, matrix-free stiffness operators and load vectors.

mod element;
mod grid;
mod operator;

pub use element::{element_stiffness, ElementStiffness};
pub use grid::{build_load, DofMap, LoadCase, PointLoad, StructuredGrid};
pub use operator::{CsrMatrix, FeModel, LinearOperator, SymmetricOperator};

pub(crate) use operator::{ElementMatrices, RankOne};
