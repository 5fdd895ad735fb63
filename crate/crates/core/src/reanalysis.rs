//! Adaptive reduced-model reanalysis.
//!
//! A small block `Φ` of normalized past displacements (the PARM) gives a cheap
//! approximate inverse `ΦK_Φ⁻¹Φᵀ` of the previous stiffness `K₀`. That inverse
//! drives the combined-approximation recurrence `r_{i+1} = −ΦK_Φ⁻¹Φᵀ ΔK r_i`
//! seeded with the previous displacement; the orthonormalized vectors (the
//! CARM) span a Galerkin subspace for the current system. When the force
//! residual of the reduced solution exceeds the tolerance, the system is solved
//! with MGCG instead and the solution refreshes the PARM.

use std::collections::VecDeque;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::fe::{FeModel, LinearOperator, SymmetricOperator};
use crate::solver::linalg::{axpy, dot, norm};
use crate::solver::MgcgOutcome;

/// Relative singular-value cutoff when orthonormalizing the CARM.
pub const RANK_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReanalysisConfig {
    /// Columns kept in the PARM (`N_s`).
    pub parm_size: usize,
    /// Columns of the CARM (`N_m`).
    pub carm_size: usize,
    /// Acceptance threshold on the relative force residual (a fraction, not a percentage).
    pub tolerance: f64,
    /// Last iteration that always solves with MGCG (`N_on`).
    pub activation: usize,
}

impl Default for ReanalysisConfig {
    fn default() -> Self {
        Self { parm_size: 2, carm_size: 2, tolerance: 0.01, activation: 20 }
    }
}

impl ReanalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.parm_size == 0 || self.carm_size == 0 {
            return Err(Error::Configuration(format!(
                "basis sizes must be at least 1, got N_s = {}, N_m = {}",
                self.parm_size, self.carm_size
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Configuration(format!("residual tolerance must be positive, got {}", self.tolerance)));
        }
        if self.activation <= self.parm_size {
            return Err(Error::Configuration(format!(
                "activation iteration ({}) must exceed the PARM size ({})",
                self.activation, self.parm_size
            )));
        }
        Ok(())
    }
}

/// First-in-first-out block of unit-norm displacement vectors.
#[derive(Debug, Clone)]
pub struct Parm {
    capacity: usize,
    columns: VecDeque<Vec<f64>>,
}

impl Parm {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), columns: VecDeque::with_capacity(capacity + 1) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.columns.len() == self.capacity
    }

    /// Columns from oldest to newest.
    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.columns.iter().map(Vec::as_slice)
    }

    /// Appends `u/‖u‖`, evicting the oldest column when full.
    pub fn insert(&mut self, u: &[f64]) -> Result<()> {
        if let Some(first) = self.columns.front() {
            check_len("PARM vector", u.len(), first.len())?;
        }
        let n = norm(u);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Parameter(format!("cannot add a vector of norm {n} to the PARM")));
        }
        self.columns.push_back(u.iter().map(|v| v / n).collect());
        if self.columns.len() > self.capacity {
            self.columns.pop_front();
        }
        Ok(())
    }
}

/// `ΦK_Φ⁻¹Φᵀ` for a PARM block and a reference operator.
#[derive(Debug, Clone)]
pub struct ProjectedInverse {
    phi: Vec<Vec<f64>>,
    inverse: DMatrix<f64>,
}

impl ProjectedInverse {
    pub fn new(parm: &Parm, k0: &dyn LinearOperator) -> Result<Self> {
        if parm.is_empty() {
            return Err(Error::Degenerate("the PARM is empty".into()));
        }
        let phi: Vec<Vec<f64>> = parm.columns().map(<[f64]>::to_vec).collect();
        check_len("PARM vector", phi[0].len(), k0.dim())?;
        let s = phi.len();
        let kphi: Vec<Vec<f64>> = phi.iter().map(|p| k0.apply(p)).collect();
        let mut m = DMatrix::zeros(s, s);
        for i in 0..s {
            for j in 0..=i {
                let v = 0.5 * (dot(&phi[i], &kphi[j]) + dot(&phi[j], &kphi[i]));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(m);
        let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if !(max > 0.0) || min <= s as f64 * f64::EPSILON * max {
            return Err(Error::Degenerate(format!(
                "projected stiffness is singular (eigenvalues in [{min:e}, {max:e}])"
            )));
        }
        let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let inverse = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
        Ok(Self { phi, inverse })
    }

    pub fn rank(&self) -> usize {
        self.phi.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let proj = DVector::from_iterator(self.phi.len(), self.phi.iter().map(|p| dot(p, v)));
        let coef = &self.inverse * proj;
        let mut out = vec![0.0; v.len()];
        for (p, &c) in self.phi.iter().zip(coef.iter()) {
            axpy(c, p, &mut out);
        }
        out
    }
}

/// Raw and orthonormalized reduced bases.
#[derive(Debug, Clone)]
pub struct Carm {
    pub raw: Vec<Vec<f64>>,
    pub basis: Vec<Vec<f64>>,
}

impl Carm {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }
}

/// Combined-approximation basis for `K(moduli_now)` from the reference
/// `K(moduli_ref)`, seeded with `seed` and orthonormalized by a thin SVD.
pub fn build_carm(
    model: &FeModel,
    inverse: &ProjectedInverse,
    moduli_now: &[f64],
    moduli_ref: &[f64],
    seed: &[f64],
    size: usize,
) -> Result<Carm> {
    check_len("seed", seed.len(), model.free_count())?;
    if size == 0 {
        return Err(Error::Parameter("the CARM needs at least one column".into()));
    }
    let mut raw = vec![seed.to_vec()];
    for i in 1..size {
        let dk = model.apply_delta_k(&raw[i - 1], moduli_now, moduli_ref)?;
        let mut next = inverse.apply(&dk);
        next.iter_mut().for_each(|v| *v = -*v);
        raw.push(next);
    }
    let basis = orthonormalize(&raw)?;
    Ok(Carm { raw, basis })
}

/// Left singular vectors of `[r_1 … r_m]` whose singular values exceed
/// `RANK_CUTOFF · σ_max`.
pub fn orthonormalize(columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = columns.len();
    let n = columns.first().map_or(0, Vec::len);
    let r = DMatrix::from_fn(n, m, |i, j| columns[j][i]);
    let svd = r.svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !(smax > 0.0 && smax.is_finite()) {
        return Err(Error::Degenerate("reduced basis is zero".into()));
    }
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Ok(order
        .into_iter()
        .filter(|&k| svd.singular_values[k] >= RANK_CUTOFF * smax)
        .map(|k| u.column(k).iter().copied().collect())
        .collect())
}

/// Galerkin solution on an orthonormal basis.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    /// `‖K R̃ y − f‖ / ‖f‖`
    pub epsilon: f64,
}

pub fn reduced_solve(k: &dyn LinearOperator, basis: &[Vec<f64>], f: &[f64]) -> Result<ReducedSolution> {
    check_len("load", f.len(), k.dim())?;
    if basis.is_empty() {
        return Err(Error::Degenerate("empty reduced basis".into()));
    }
    let fnorm = norm(f);
    if fnorm == 0.0 {
        return Err(Error::Parameter("load vector is zero".into()));
    }
    let m = basis.len();
    let kr: Vec<Vec<f64>> = basis.iter().map(|r| k.apply(r)).collect();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = 0.5 * (dot(&basis[i], &kr[j]) + dot(&basis[j], &kr[i]));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let b = DVector::from_iterator(m, basis.iter().map(|r| dot(r, f)));
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Degenerate("reduced stiffness is not positive definite".into()))?;
    let y = chol.solve(&b);
    let mut u = vec![0.0; f.len()];
    let mut residual: Vec<f64> = f.iter().map(|v| -v).collect();
    for (i, &yi) in y.iter().enumerate() {
        axpy(yi, &basis[i], &mut u);
        axpy(yi, &kr[i], &mut residual);
    }
    let epsilon = norm(&residual) / fnorm;
    if !epsilon.is_finite() {
        return Err(Error::Degenerate("reduced solution is not finite".into()));
    }
    Ok(ReducedSolution { y: y.iter().copied().collect(), u, epsilon })
}

/// Which branch of the adaptive scheme produced a displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePath {
    /// Before activation: MGCG only.
    Warmup,
    /// Reduced solution accepted.
    CarmAccepted,
    /// Reduced solution rejected (or basis degenerate); MGCG solved instead.
    CarmRejected,
    /// Plain MGCG run, no reanalysis involved.
    Mgcg,
    /// Sparse direct factorization.
    Direct,
}

impl SolvePath {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolvePath::Warmup => "warmup",
            SolvePath::CarmAccepted => "carm-accepted",
            SolvePath::CarmRejected => "carm-rejected",
            SolvePath::Mgcg => "mgcg",
            SolvePath::Direct => "direct",
        }
    }

    /// True when an MGCG solve happened on this path.
    pub fn ran_mgcg(&self) -> bool {
        matches!(self, SolvePath::Warmup | SolvePath::CarmRejected | SolvePath::Mgcg)
    }
}

impl std::fmt::Display for SolvePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub u: Vec<f64>,
    pub path: SolvePath,
    /// Force residual of the reduced solution, when one was computed.
    pub epsilon: Option<f64>,
    /// Relative residual reported by MGCG, when it ran.
    pub mgcg_residual: Option<f64>,
    pub cg_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReanalysisCounters {
    pub mgcg_evaluations: usize,
    pub carm_solves: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Persistent state across optimization iterations.
#[derive(Debug, Clone)]
pub struct ReanalysisState {
    reference: Option<Vec<f64>>,
    u_last: Option<Vec<f64>>,
    parm: Parm,
    counters: ReanalysisCounters,
}

impl ReanalysisState {
    pub fn new(config: &ReanalysisConfig) -> Self {
        Self { reference: None, u_last: None, parm: Parm::new(config.parm_size), counters: Default::default() }
    }

    pub fn parm(&self) -> &Parm {
        &self.parm
    }

    pub fn u_last(&self) -> Option<&[f64]> {
        self.u_last.as_deref()
    }

    pub fn reference_moduli(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }

    pub fn counters(&self) -> ReanalysisCounters {
        self.counters
    }

    fn try_carm(
        &mut self,
        model: &FeModel,
        current: &SymmetricOperator,
        moduli: &[f64],
        f: &[f64],
        config: &ReanalysisConfig,
    ) -> Result<ReducedSolution> {
        let (reference, seed) = match (&self.reference, &self.u_last) {
            (Some(r), Some(u)) => (r, u),
            _ => return Err(Error::Degenerate("no previous solution to build on".into())),
        };
        let k0 = model.assemble(reference)?;
        let inverse = ProjectedInverse::new(&self.parm, &k0)?;
        let carm = build_carm(model, &inverse, moduli, reference, seed, config.carm_size)?;
        reduced_solve(current, &carm.basis, f)
    }
}

/// One equilibrium solve of the adaptive scheme for iteration `iteration`
/// (1-based). `current` is the stiffness for the present design; `mgcg` solves
/// it from an optional initial guess.
pub fn reanalysis_solve(
    state: &mut ReanalysisState,
    model: &FeModel,
    current: &SymmetricOperator,
    f: &[f64],
    iteration: usize,
    config: &ReanalysisConfig,
    mgcg: &mut dyn FnMut(&[f64], Option<&[f64]>) -> Result<MgcgOutcome>,
) -> Result<SolveOutcome> {
    check_len("load", f.len(), model.free_count())?;
    let moduli = current
        .moduli()
        .ok_or_else(|| Error::Parameter("reanalysis needs a fine-level stiffness operator".into()))?
        .to_vec();
    check_len("moduli", moduli.len(), model.grid().element_count())?;

    let outcome = if iteration <= config.activation {
        let out = mgcg(f, state.u_last.as_deref())?;
        state.counters.mgcg_evaluations += 1;
        if iteration + config.parm_size > config.activation {
            state.parm.insert(&out.u)?;
        }
        SolveOutcome {
            path: SolvePath::Warmup,
            epsilon: None,
            mgcg_residual: Some(out.relative_residual),
            cg_iterations: Some(out.iterations),
            u: out.u,
        }
    } else {
        let attempt = state.try_carm(model, current, &moduli, f, config);
        // a rejected reduced solution is still the best available start for
        // CG: its span contains u_last and it minimizes the energy error there
        let (epsilon, start) = match attempt {
            Ok(sol) => {
                state.counters.carm_solves += 1;
                if sol.epsilon < config.tolerance {
                    state.counters.accepted += 1;
                    debug!("iteration {iteration}: reduced solution accepted, residual {:.3e}", sol.epsilon);
                    state.u_last = Some(sol.u.clone());
                    state.reference = Some(moduli);
                    return Ok(SolveOutcome {
                        u: sol.u,
                        path: SolvePath::CarmAccepted,
                        epsilon: Some(sol.epsilon),
                        mgcg_residual: None,
                        cg_iterations: None,
                    });
                }
                (Some(sol.epsilon), Some(sol.u))
            }
            Err(Error::Degenerate(msg)) => {
                warn!("iteration {iteration}: reduced basis unusable ({msg}); solving with MGCG");
                (None, state.u_last.clone())
            }
            Err(e) => return Err(e),
        };
        state.counters.rejected += 1;
        let out = mgcg(f, start.as_deref())?;
        state.counters.mgcg_evaluations += 1;
        debug!(
            "iteration {iteration}: reduced residual {:?} rejected, MGCG residual {:.3e} after {} iterations",
            epsilon, out.relative_residual, out.iterations
        );
        state.parm.insert(&out.u)?;
        SolveOutcome {
            path: SolvePath::CarmRejected,
            epsilon,
            mgcg_residual: Some(out.relative_residual),
            cg_iterations: Some(out.iterations),
            u: out.u,
        }
    };
    state.u_last = Some(outcome.u.clone());
    state.reference = Some(moduli);
    Ok(outcome)
}
