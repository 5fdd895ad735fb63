//! Density-based topology optimization loop with optimality-criteria updates.
//!
//! Each iteration filters the design, assembles the stiffness, solves the
//! equilibrium equations (direct, MGCG, or adaptive reanalysis), evaluates the
//! objective and its sensitivities, chains them through the filter and updates
//! the design with a bisection on the volume multiplier.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};

use crate::error::{check_len, Error, Result};
use crate::fe::{FeModel, LinearOperator, SymmetricOperator};
use crate::material::{adjoint_sensitivity, compliance_sensitivity, FilterKernel, SimpLaw};
use crate::reanalysis::{reanalysis_solve, ReanalysisConfig, ReanalysisCounters, ReanalysisState, SolveOutcome, SolvePath};
use crate::solver::linalg::{dot, SkylineCholesky};
use crate::solver::{build_hierarchy, mgcg, MultigridConfig, MultigridHierarchy, MultigridSetup, DEFAULT_DIRECT_CAP};

/// What the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// End-compliance `fᵀu`.
    Compliance,
    /// Displacement of a free DOF (global index). Minimizing it pushes the
    /// output against the direction of the input force.
    OutputDisplacement { dof: usize },
}

/// A fully specified design problem.
#[derive(Debug, Clone)]
pub struct OptProblem {
    pub model: FeModel,
    /// Reduced load vector.
    pub load: Vec<f64>,
    pub objective: Objective,
    pub volume_fraction: f64,
    pub law: SimpLaw,
    pub filter: FilterKernel,
}

impl OptProblem {
    pub fn new(
        model: FeModel,
        load: Vec<f64>,
        objective: Objective,
        volume_fraction: f64,
        law: SimpLaw,
        filter_radius: f64,
    ) -> Result<Self> {
        check_len("load", load.len(), model.free_count())?;
        if !(volume_fraction > 0.0 && volume_fraction < 1.0) {
            return Err(Error::Parameter(format!("volume fraction must lie in (0, 1), got {volume_fraction}")));
        }
        law.validate()?;
        if let Objective::OutputDisplacement { dof } = objective {
            if dof >= model.dofmap().total() || model.dofmap().is_fixed(dof) {
                return Err(Error::Configuration(format!("output DOF {dof} is not a free DOF")));
            }
        }
        let filter = FilterKernel::new(model.grid(), filter_radius)?;
        Ok(Self { model, load, objective, volume_fraction, law, filter })
    }

    pub fn element_count(&self) -> usize {
        self.model.grid().element_count()
    }

    /// Reduced unit vector selecting the output displacement, if any.
    fn selector(&self) -> Option<Vec<f64>> {
        match self.objective {
            Objective::Compliance => None,
            Objective::OutputDisplacement { dof } => {
                let mut l = vec![0.0; self.model.free_count()];
                l[self.model.dofmap().free_index(dof).expect("validated free DOF")] = 1.0;
                Some(l)
            }
        }
    }

    /// Objective value for displacement `u`.
    pub fn objective_value(&self, u: &[f64]) -> f64 {
        match self.objective {
            Objective::Compliance => dot(&self.load, u),
            Objective::OutputDisplacement { dof } => u[self.model.dofmap().free_index(dof).expect("validated free DOF")],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    Direct,
    Mgcg,
    Aarmr,
}

impl SolverMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverMode::Direct => "direct",
            SolverMode::Mgcg => "mgcg",
            SolverMode::Aarmr => "aarmr",
        }
    }
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(SolverMode::Direct),
            "mgcg" => Ok(SolverMode::Mgcg),
            "aarmr" => Ok(SolverMode::Aarmr),
            other => Err(Error::Parameter(format!("unknown solver mode '{other}' (direct, mgcg, aarmr)"))),
        }
    }
}

/// Move limit and exponent of the optimality-criteria update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcSettings {
    pub move_limit: f64,
    pub exponent: f64,
}

impl OcSettings {
    pub fn compliance() -> Self {
        Self { move_limit: 0.2, exponent: 0.5 }
    }

    /// Signed sensitivities: a tighter move keeps the early steps from
    /// cutting the load path to the output port.
    pub fn mechanism() -> Self {
        Self { move_limit: 0.05, exponent: 0.3 }
    }

    pub fn for_objective(objective: Objective) -> Self {
        match objective {
            Objective::Compliance => Self::compliance(),
            Objective::OutputDisplacement { .. } => Self::mechanism(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::Configuration(format!("move limit must lie in (0, 1], got {}", self.move_limit)));
        }
        if !(self.exponent > 0.0 && self.exponent <= 1.0) {
            return Err(Error::Configuration(format!("OC exponent must lie in (0, 1], got {}", self.exponent)));
        }
        Ok(())
    }
}

/// Target volume fraction for a given (1-based) iteration.
pub type VolumeSchedule = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct OptConfig {
    pub max_iterations: usize,
    /// Stop when the largest design change falls below this.
    pub tolerance: f64,
    /// `None` selects the default for the objective.
    pub oc: Option<OcSettings>,
    pub mode: SolverMode,
    pub reanalysis: ReanalysisConfig,
    pub multigrid: MultigridConfig,
    pub direct_cap: usize,
    pub volume_schedule: Option<VolumeSchedule>,
    /// Start plain MGCG from the previous iteration's solution instead of
    /// zero. Off by default: the reference solver starts every solve cold.
    pub mgcg_warm_start: bool,
}

impl fmt::Debug for OptConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OptConfig")
            .field("max_iterations", &self.max_iterations)
            .field("tolerance", &self.tolerance)
            .field("oc", &self.oc)
            .field("mode", &self.mode)
            .field("reanalysis", &self.reanalysis)
            .field("multigrid", &self.multigrid)
            .field("direct_cap", &self.direct_cap)
            .field("volume_schedule", &self.volume_schedule.as_ref().map(|_| "<fn>"))
            .field("mgcg_warm_start", &self.mgcg_warm_start)
            .finish()
    }
}

impl OptConfig {
    pub fn new(mode: SolverMode, dim: usize) -> Self {
        Self {
            max_iterations: 200,
            tolerance: 0.01,
            oc: None,
            mode,
            reanalysis: ReanalysisConfig::default(),
            multigrid: MultigridConfig::for_dim(dim),
            direct_cap: DEFAULT_DIRECT_CAP,
            volume_schedule: None,
            mgcg_warm_start: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0) {
            return Err(Error::Configuration(format!("convergence tolerance must be >= 0, got {}", self.tolerance)));
        }
        if let Some(oc) = &self.oc {
            oc.validate()?;
        }
        match self.mode {
            SolverMode::Direct => {}
            SolverMode::Mgcg => self.multigrid.validate()?,
            SolverMode::Aarmr => {
                self.multigrid.validate()?;
                self.reanalysis.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    /// Volume fraction of the physical densities the objective was evaluated on.
    pub volume: f64,
    /// Mean absolute design change, in percent.
    pub change_pct: f64,
    pub path: SolvePath,
    pub epsilon: Option<f64>,
    pub mgcg_residual: Option<f64>,
    /// CG iterations summed over every MGCG call of the iteration.
    pub cg_iterations: Option<usize>,
    pub mgcg_calls: usize,
    pub solve_seconds: f64,
    pub adjoint_path: Option<SolvePath>,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub design: Vec<f64>,
    pub physical: Vec<f64>,
    pub records: Vec<IterationRecord>,
    /// Objective of the final physical design from a tight solve.
    pub final_objective: f64,
    pub converged: bool,
    pub primary_counters: Option<ReanalysisCounters>,
    pub adjoint_counters: Option<ReanalysisCounters>,
}

/// Failure inside the loop; keeps the records gathered so far.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error} (after {} completed iterations)", records.len())]
pub struct OptimizationAborted {
    pub error: Error,
    pub records: Vec<IterationRecord>,
}

/// `Σ|new − old| / N × 100`.
pub fn change_metric(new: &[f64], old: &[f64]) -> Result<f64> {
    check_len("new design", new.len(), old.len())?;
    if new.is_empty() {
        return Ok(0.0);
    }
    Ok(new.iter().zip(old).map(|(a, b)| (a - b).abs()).sum::<f64>() / new.len() as f64 * 100.0)
}

/// Optimality-criteria update. The volume of a design `x` is
/// `Σ dv_e x_e / Σ dv_e`; the multiplier is bisected (geometric midpoint on
/// `[1e-9, 1e9]`) until that volume equals `target` to 1e-10 relative.
/// Positive objective sensitivities are allowed only for mechanisms (`signed`),
/// where the update factor is guarded from below by `1e-10` and the volume
/// bound may be inactive: if even the smallest multiplier cannot reach
/// `target`, that update is returned below the bound.
pub fn oc_update(rho: &[f64], dc: &[f64], dv: &[f64], target: f64, settings: &OcSettings, signed: bool) -> Result<Vec<f64>> {
    let n = rho.len();
    check_len("objective sensitivities", dc.len(), n)?;
    check_len("volume sensitivities", dv.len(), n)?;
    if let Some(e) = (0..n).find(|&e| !(dv[e] > 0.0)) {
        return Err(Error::Optimization(format!("volume sensitivity of element {e} is not positive")));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Optimization(format!("target volume {target} outside (0, 1)")));
    }
    let total: f64 = dv.iter().sum();
    let volume = |x: &[f64]| dot(dv, x) / total;
    let mv = settings.move_limit;
    let update = |lambda: f64, out: &mut Vec<f64>| {
        out.clear();
        out.extend((0..n).map(|e| {
            let mut b = -dc[e] / (lambda * dv[e]);
            if signed {
                b = b.max(1e-10);
            }
            let cand = rho[e] * b.max(0.0).powf(settings.exponent);
            cand.clamp((rho[e] - mv).max(0.0), (rho[e] + mv).min(1.0))
        }));
    };
    let (mut lo, mut hi) = (1e-9_f64, 1e9_f64);
    let mut x = Vec::with_capacity(n);
    update(lo, &mut x);
    let v_lo = volume(&x);
    if signed && v_lo <= target {
        // the volume bound is slack: no multiplier is needed
        return Ok(x);
    }
    update(hi, &mut x);
    let v_hi = volume(&x);
    if v_lo < target || v_hi > target {
        return Err(Error::Optimization(format!(
            "volume multiplier not bracketed: volume spans [{v_hi:.6}, {v_lo:.6}] for target {target:.6}"
        )));
    }
    for _ in 0..500 {
        let mid = (lo * hi).sqrt();
        update(mid, &mut x);
        let v = volume(&x);
        if (v - target).abs() <= 1e-10 * target {
            return Ok(x);
        }
        if v > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 4.0 * f64::EPSILON {
            break;
        }
    }
    let v = volume(&x);
    if (v - target).abs() <= 1e-9 * target {
        Ok(x)
    } else {
        Err(Error::Optimization(format!("volume bisection stalled at {v:.12} for target {target:.12}")))
    }
}

/// Objective and physical-density sensitivities for displacement `u`; the
/// adjoint `λ` (solving `Kλ = −l`) is needed for output displacements.
pub fn objective_and_sensitivity(
    problem: &OptProblem,
    physical: &[f64],
    u: &[f64],
    adjoint: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let c = problem.objective_value(u);
    let sens = match problem.objective {
        Objective::Compliance => compliance_sensitivity(&problem.model, &problem.law, physical, u)?,
        Objective::OutputDisplacement { .. } => {
            let lambda = adjoint.ok_or_else(|| Error::Parameter("output displacement needs an adjoint".into()))?;
            adjoint_sensitivity(&problem.model, &problem.law, physical, lambda, u)?
        }
    };
    Ok((c, sens))
}

/// Objective of a physical density field from a tight solve: direct when the
/// system fits under the cap, MGCG to 1e-10 otherwise.
pub fn evaluate_objective(problem: &OptProblem, physical: &[f64], config: &OptConfig) -> Result<f64> {
    let moduli = problem.law.moduli(physical)?;
    let op = problem.model.assemble(&moduli)?;
    let u = if problem.model.free_count() <= config.direct_cap {
        SkylineCholesky::factor(&op.to_csr())?.solve(&problem.load)
    } else {
        let mg = MultigridConfig { tolerance: 1e-10, max_iterations: 5000, ..config.multigrid.clone() };
        let out = mgcg(&build_hierarchy(&problem.model, &moduli, &mg)?, &problem.load, None)?;
        if !out.converged {
            warn!("final evaluation stopped at relative residual {:.3e}", out.relative_residual);
        }
        out.u
    };
    Ok(problem.objective_value(&u))
}

/// Per-iteration solver caches and persistent warm starts.
struct Equilibrium {
    mode: SolverMode,
    setup: Option<MultigridSetup>,
    direct_cap: usize,
    reanalysis: ReanalysisConfig,
    primary: ReanalysisState,
    adjoint: ReanalysisState,
    u_prev: Option<Vec<f64>>,
    lambda_prev: Option<Vec<f64>>,
    warm_start: bool,
}

/// Lazily built solver data for the current stiffness.
#[derive(Default)]
struct IterationCache {
    hierarchy: Option<MultigridHierarchy>,
    factor: Option<SkylineCholesky>,
}

impl Equilibrium {
    fn new(problem: &OptProblem, config: &OptConfig) -> Result<Self> {
        let setup = match config.mode {
            SolverMode::Direct => {
                if problem.model.free_count() > config.direct_cap {
                    return Err(Error::Solver(format!(
                        "{} free DOFs exceed the direct-solver cap of {}; use the MGCG solver instead",
                        problem.model.free_count(),
                        config.direct_cap
                    )));
                }
                None
            }
            _ => Some(MultigridSetup::new(&problem.model, &config.multigrid)?),
        };
        Ok(Self {
            mode: config.mode,
            setup,
            direct_cap: config.direct_cap,
            reanalysis: config.reanalysis,
            primary: ReanalysisState::new(&config.reanalysis),
            adjoint: ReanalysisState::new(&config.reanalysis),
            u_prev: None,
            lambda_prev: None,
            warm_start: config.mgcg_warm_start,
        })
    }

    fn solve(
        &mut self,
        model: &FeModel,
        op: &SymmetricOperator,
        rhs: &[f64],
        iteration: usize,
        adjoint: bool,
        cache: &mut IterationCache,
    ) -> Result<SolveOutcome> {
        let setup = self.setup.as_ref();
        let mut run_mgcg = |f: &[f64], u0: Option<&[f64]>| {
            if cache.hierarchy.is_none() {
                cache.hierarchy = Some(setup.expect("multigrid setup for iterative modes").build(op)?);
            }
            mgcg(cache.hierarchy.as_ref().expect("built above"), f, u0)
        };
        let warm = if adjoint { &mut self.lambda_prev } else { &mut self.u_prev };
        let outcome = match self.mode {
            SolverMode::Direct => {
                if cache.factor.is_none() {
                    if op.dim() > self.direct_cap {
                        return Err(Error::Solver(format!("{} free DOFs exceed the direct-solver cap", op.dim())));
                    }
                    cache.factor = Some(SkylineCholesky::factor(&op.to_csr())?);
                }
                let u = cache.factor.as_ref().expect("factored above").solve(rhs);
                SolveOutcome { u, path: SolvePath::Direct, epsilon: None, mgcg_residual: None, cg_iterations: None }
            }
            SolverMode::Mgcg => {
                let out = run_mgcg(rhs, warm.as_deref().filter(|_| self.warm_start))?;
                if !out.converged {
                    debug!("iteration {iteration}: MGCG stopped at the cap, residual {:.3e}", out.relative_residual);
                }
                SolveOutcome {
                    u: out.u,
                    path: SolvePath::Mgcg,
                    epsilon: None,
                    mgcg_residual: Some(out.relative_residual),
                    cg_iterations: Some(out.iterations),
                }
            }
            SolverMode::Aarmr => {
                let state = if adjoint { &mut self.adjoint } else { &mut self.primary };
                reanalysis_solve(state, model, op, rhs, iteration, &self.reanalysis, &mut run_mgcg)?
            }
        };
        *warm = Some(outcome.u.clone());
        Ok(outcome)
    }
}

fn volume_fraction(physical: &[f64]) -> f64 {
    physical.iter().sum::<f64>() / physical.len().max(1) as f64
}

/// Runs the optimization from the uniform design `ρ = V`.
pub fn optimize(problem: &OptProblem, config: &OptConfig) -> Result<OptResult, OptimizationAborted> {
    let mut records = Vec::new();
    match run(problem, config, &mut records) {
        Ok(result) => Ok(result),
        Err(error) => Err(OptimizationAborted { error, records }),
    }
}

fn run(problem: &OptProblem, config: &OptConfig, records: &mut Vec<IterationRecord>) -> Result<OptResult> {
    config.validate()?;
    let oc = config.oc.unwrap_or_else(|| OcSettings::for_objective(problem.objective));
    oc.validate()?;
    let n = problem.element_count();
    let dv = problem.filter.column_sums();
    let selector = problem.selector();
    let adjoint_rhs: Option<Vec<f64>> = selector.as_ref().map(|l| l.iter().map(|v| -v).collect());
    let signed = selector.is_some();
    let mut equilibrium = Equilibrium::new(problem, config)?;

    let mut design = vec![problem.volume_fraction; n];
    let mut converged = false;

    for iteration in 1..=config.max_iterations {
        let target = match &config.volume_schedule {
            Some(schedule) => schedule(iteration),
            None => problem.volume_fraction,
        };
        let physical = problem.filter.filter(&design)?;
        let moduli = problem.law.moduli(&physical)?;
        let op = problem.model.assemble(&moduli)?;

        let start = Instant::now();
        let mut cache = IterationCache::default();
        let primary = equilibrium.solve(&problem.model, &op, &problem.load, iteration, false, &mut cache)?;
        let adjoint = match &adjoint_rhs {
            Some(rhs) => Some(equilibrium.solve(&problem.model, &op, rhs, iteration, true, &mut cache)?),
            None => None,
        };
        let solve_seconds = start.elapsed().as_secs_f64();

        let (objective, mut sens) =
            objective_and_sensitivity(problem, &physical, &primary.u, adjoint.as_ref().map(|a| a.u.as_slice()))?;
        if !signed {
            let positive = sens.iter().filter(|&&s| s > 0.0).count();
            if positive > 0 {
                debug!("iteration {iteration}: clamped {positive} positive compliance sensitivities");
                sens.iter_mut().for_each(|s| *s = s.min(0.0));
            }
        }
        let dc = problem.filter.chain(&sens)?;
        let new_design = oc_update(&design, &dc, &dv, target, &oc, signed)?;
        let change_pct = change_metric(&new_design, &design)?;
        let max_change = new_design.iter().zip(&design).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        design = new_design;

        let solves = std::iter::once(&primary).chain(adjoint.as_ref());
        let (mut cg, mut calls) = (0usize, 0usize);
        for s in solves {
            if let Some(it) = s.cg_iterations {
                cg += it;
                calls += 1;
            }
        }
        let record = IterationRecord {
            iteration,
            objective,
            volume: volume_fraction(&physical),
            change_pct,
            path: primary.path,
            epsilon: primary.epsilon,
            mgcg_residual: primary.mgcg_residual,
            cg_iterations: (calls > 0).then_some(cg),
            mgcg_calls: calls,
            solve_seconds,
            adjoint_path: adjoint.as_ref().map(|a| a.path),
        };
        info!(
            "it {:4}  obj {:.6e}  vol {:.4}  ch {:.3}%  {}  eps {}  cg {}  t {:.3}s",
            iteration,
            objective,
            record.volume,
            change_pct,
            record.path,
            record.epsilon.map_or("-".into(), |e| format!("{e:.2e}")),
            record.cg_iterations.map_or("-".into(), |c| c.to_string()),
            solve_seconds
        );
        records.push(record);
        if max_change < config.tolerance {
            converged = true;
            break;
        }
    }
    let physical = problem.filter.filter(&design)?;
    let final_objective = evaluate_objective(problem, &physical, config)?;
    let aarmr = config.mode == SolverMode::Aarmr;
    Ok(OptResult {
        design,
        physical,
        records: std::mem::take(records),
        final_objective,
        converged,
        primary_counters: aarmr.then(|| equilibrium.primary.counters()),
        adjoint_counters: (aarmr && signed).then(|| equilibrium.adjoint.counters()),
    })
}
