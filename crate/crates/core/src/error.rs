use thiserror::Error;

/// Errors raised by the finite-element model, the solvers and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside its admissible range or has the wrong length.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The problem setup (grid, supports, loads, hierarchy depth) is inconsistent.
    #[error("invalid configuration: {0}")]
    Configuration(String),
    /// A reduced basis or projected matrix is numerically singular.
    #[error("degenerate basis: {0}")]
    Degenerate(String),
    /// A linear solver could not produce a solution.
    #[error("solver failure: {0}")]
    Solver(String),
    /// The design update could not proceed.
    #[error("optimization failure: {0}")]
    Optimization(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Parameter(format!(
            "{what}: length {got}, expected {expected}"
        )));
    }
    Ok(())
}
