//! Sparse direct reference solver.

use crate::error::{check_len, Error, Result};
use crate::fe::{LinearOperator, SymmetricOperator};
use crate::solver::linalg::SkylineCholesky;

/// Default cap on the free-DOF count accepted by [`direct_solve`].
pub const DEFAULT_DIRECT_CAP: usize = 60_000;

/// Solves `K u = f` by envelope Cholesky. Refuses systems above `max_dofs`.
pub fn direct_solve(op: &SymmetricOperator, f: &[f64], max_dofs: usize) -> Result<Vec<f64>> {
    let n = op.dim();
    check_len("load", f.len(), n)?;
    if n > max_dofs {
        return Err(Error::Solver(format!(
            "{n} free DOFs exceed the direct-solver cap of {max_dofs}; use the MGCG solver instead"
        )));
    }
    Ok(SkylineCholesky::factor(&op.to_csr())?.solve(f))
}
