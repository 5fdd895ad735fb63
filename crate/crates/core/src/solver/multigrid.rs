//! Geometric multigrid on nested structured grids and conjugate gradients
//! preconditioned by one V-cycle (MGCG).
//!
//! Level 0 is the fine grid; each coarser level halves the element count per
//! axis. Prolongation is bilinear/trilinear nodal interpolation with rows of
//! fixed fine DOFs removed, and coarse operators are Galerkin products
//! `P^T K P`, built element by element: every coarse element owns a dense
//! matrix accumulated from its children. The coarsest level is factored
//! directly.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::fe::{DofMap, ElementMatrices, FeModel, LinearOperator, RankOne, StructuredGrid, SymmetricOperator};
use crate::solver::linalg::{axpy, dot, norm, SkylineCholesky};

/// Multigrid and CG settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MultigridConfig {
    /// Total number of grid levels, fine grid included.
    pub levels: usize,
    pub pre_smooth: usize,
    pub post_smooth: usize,
    /// Damped-Jacobi relaxation factor.
    pub damping: f64,
    /// Relative force-residual tolerance `|f - K u| / |f|`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl MultigridConfig {
    /// Defaults for 2D problems (200 CG iterations at most).
    pub fn for_2d() -> Self {
        Self { levels: 3, pre_smooth: 1, post_smooth: 1, damping: 0.8, tolerance: 1e-6, max_iterations: 200 }
    }

    /// Defaults for 3D problems: 50 CG iterations at most and a lighter Jacobi
    /// damping, since 0.8 over-corrects the stiffest trilinear modes.
    pub fn for_3d() -> Self {
        Self { damping: 0.6, max_iterations: 50, ..Self::for_2d() }
    }

    pub fn for_dim(dim: usize) -> Self {
        if dim == 3 {
            Self::for_3d()
        } else {
            Self::for_2d()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Configuration(format!("need at least 2 grid levels, got {}", self.levels)));
        }
        if self.pre_smooth == 0 || self.post_smooth == 0 {
            return Err(Error::Configuration("smoothing counts must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Configuration(format!("damping must lie in (0, 1), got {}", self.damping)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Configuration(format!("CG tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Configuration("CG iteration cap must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for MultigridConfig {
    fn default() -> Self {
        Self::for_2d()
    }
}

/// Interpolation from a coarse grid to the grid with twice the elements per axis.
#[derive(Debug, Clone)]
pub struct Prolongation {
    fine: StructuredGrid,
    coarse: StructuredGrid,
    fine_dofs: Arc<DofMap>,
    coarse_dofs: Arc<DofMap>,
}

/// Per-axis interpolation weights of fine coordinate `i` in coarse coordinates.
#[inline]
fn axis_weights(i: usize) -> ([(usize, f64); 2], usize) {
    if i % 2 == 0 {
        ([(i / 2, 1.0), (0, 0.0)], 1)
    } else {
        ([(i / 2, 0.5), (i / 2 + 1, 0.5)], 2)
    }
}

impl Prolongation {
    fn new(fine: StructuredGrid, fine_dofs: Arc<DofMap>) -> Result<Self> {
        let coarse = fine.coarsen()?;
        let dpn = fine.dofs_per_node();
        let mut fixed = vec![false; coarse.dof_count()];
        for n in 0..coarse.node_count() {
            let [i, j, k] = coarse.node_coords(n);
            let fnode = fine.node_index(2 * i, 2 * j, 2 * k);
            for c in 0..dpn {
                fixed[n * dpn + c] = fine_dofs.is_fixed(fnode * dpn + c);
            }
        }
        let coarse_dofs = Arc::new(DofMap::from_mask(dpn, &fixed)?);
        Ok(Self { fine, coarse, fine_dofs, coarse_dofs })
    }

    pub fn fine_grid(&self) -> &StructuredGrid {
        &self.fine
    }

    pub fn coarse_grid(&self) -> &StructuredGrid {
        &self.coarse
    }

    pub fn coarse_dofmap(&self) -> &DofMap {
        &self.coarse_dofs
    }

    /// Calls `visit(fine_node, coarse_node, weight)` for every nonzero nodal weight.
    fn for_each_weight(&self, mut visit: impl FnMut(usize, usize, f64)) {
        let [nx, ny, nz] = self.fine.nodes_per_axis();
        let mut fnode = 0;
        for k in 0..nz {
            let (wk, ck) = axis_weights(k);
            for j in 0..ny {
                let (wj, cj) = axis_weights(j);
                for i in 0..nx {
                    let (wi, ci) = axis_weights(i);
                    for &(kk, a) in &wk[..ck] {
                        for &(jj, b) in &wj[..cj] {
                            for &(ii, c) in &wi[..ci] {
                                visit(fnode, self.coarse.node_index(ii, jj, kk), a * b * c);
                            }
                        }
                    }
                    fnode += 1;
                }
            }
        }
    }

    /// Full-length coarse vector to full-length fine vector; fixed fine entries zeroed.
    pub(crate) fn prolong_full(&self, xc: &[f64], xf: &mut [f64]) {
        let dpn = self.fine.dofs_per_node();
        xf.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_weight(|f, c, w| {
            for d in 0..dpn {
                xf[f * dpn + d] += w * xc[c * dpn + d];
            }
        });
        for &d in self.fine_dofs.fixed() {
            xf[d] = 0.0;
        }
    }

    /// Transpose of [`Self::prolong_full`].
    pub(crate) fn restrict_full(&self, rf: &[f64], rc: &mut [f64]) {
        let dpn = self.fine.dofs_per_node();
        rc.iter_mut().for_each(|v| *v = 0.0);
        let fixed = &self.fine_dofs;
        self.for_each_weight(|f, c, w| {
            for d in 0..dpn {
                if !fixed.is_fixed(f * dpn + d) {
                    rc[c * dpn + d] += w * rf[f * dpn + d];
                }
            }
        });
        for &d in self.coarse_dofs.fixed() {
            rc[d] = 0.0;
        }
    }

    /// `P x` on reduced vectors.
    pub fn prolong(&self, xc: &[f64]) -> Vec<f64> {
        let mut xf = vec![0.0; self.fine.dof_count()];
        self.prolong_full(&self.coarse_dofs.scatter(xc), &mut xf);
        self.fine_dofs.gather(&xf)
    }

    /// `P^T r` on reduced vectors.
    pub fn restrict(&self, rf: &[f64]) -> Vec<f64> {
        let mut rc = vec![0.0; self.coarse.dof_count()];
        self.restrict_full(&self.fine_dofs.scatter(rf), &mut rc);
        self.coarse_dofs.gather(&rc)
    }

    /// Nodal interpolation matrix from a coarse element's nodes to the nodes of
    /// its child at offset `child`, `t[a][b]` = weight of coarse node b at fine node a.
    fn child_interpolation(&self, child: [usize; 3]) -> [[f64; 8]; 8] {
        let offs = self.fine.local_offsets();
        let dim = self.fine.dim();
        let mut t = [[0.0; 8]; 8];
        for (a, oa) in offs.iter().enumerate() {
            for (b, ob) in offs.iter().enumerate() {
                let mut w = 1.0;
                for ax in 0..dim {
                    let p = (child[ax] + oa[ax]) as f64;
                    let q = 2.0 * ob[ax] as f64;
                    w *= 1.0 - (p - q).abs() / 2.0;
                }
                t[a][b] = w.max(0.0);
            }
        }
        t
    }

    /// Galerkin coarse operator `P^T K P`.
    fn coarsen_operator(&self, op: &SymmetricOperator) -> SymmetricOperator {
        let grid = &self.fine;
        let dpn = grid.dofs_per_node();
        let nen = grid.nodes_per_element();
        let nd = grid.dofs_per_element();
        let children: Vec<[usize; 3]> = (0..nen).map(|c| grid.local_offsets()[c]).collect();
        let interp: Vec<[[f64; 8]; 8]> = children.iter().map(|&c| self.child_interpolation(c)).collect();

        // unmasked child contributions of a shared element matrix depend only on the child slot
        let shared: Option<Vec<Vec<f64>>> = match &op.matrices {
            ElementMatrices::Scaled { base, .. } => Some(
                interp
                    .iter()
                    .map(|t| galerkin_element(base.values(), nd, dpn, nen, t, &[true; 24]))
                    .collect(),
            ),
            ElementMatrices::Dense { .. } => None,
        };

        let nc = self.coarse.element_count();
        let mut values = vec![0.0; nc * nd * nd];
        let mut mask = [true; 24];
        for (ec, kc) in values.chunks_exact_mut(nd * nd).enumerate() {
            let [ci, cj, ck] = self.coarse.element_coords(ec);
            for (slot, child) in children.iter().enumerate() {
                let e = grid.element_index(2 * ci + child[0], 2 * cj + child[1], 2 * ck + child[2]);
                let (m, s) = op.matrices.element(e);
                let mut masked = false;
                for (l, d) in grid.element_dofs(e).into_iter().enumerate() {
                    mask[l] = !self.fine_dofs.is_fixed(d);
                    masked |= !mask[l];
                }
                match (&shared, masked) {
                    (Some(g), false) => axpy(s, &g[slot], kc),
                    _ => axpy(s, &galerkin_element(m, nd, dpn, nen, &interp[slot], &mask), kc),
                }
            }
        }

        let springs = op.springs.iter().filter_map(|t| self.restrict_rank_one(t)).collect();
        SymmetricOperator {
            grid: self.coarse,
            dofmap: Arc::clone(&self.coarse_dofs),
            matrices: ElementMatrices::Dense { size: nd, values },
            springs,
        }
    }

    fn restrict_rank_one(&self, t: &RankOne) -> Option<RankOne> {
        let dpn = self.fine.dofs_per_node();
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (&d, &w) in t.dofs.iter().zip(&t.weights) {
            if self.fine_dofs.is_fixed(d) {
                continue;
            }
            let (node, comp) = (d / dpn, d % dpn);
            let [i, j, k] = self.fine.node_coords(node);
            let (wi, ci) = axis_weights(i);
            let (wj, cj) = axis_weights(j);
            let (wk, ck) = if self.fine.dim() == 3 { axis_weights(k) } else { ([(0, 1.0), (0, 0.0)], 1) };
            for &(kk, c) in &wk[..ck] {
                for &(jj, b) in &wj[..cj] {
                    for &(ii, a) in &wi[..ci] {
                        let cd = self.coarse.node_index(ii, jj, kk) * dpn + comp;
                        if !self.coarse_dofs.is_fixed(cd) {
                            *acc.entry(cd).or_insert(0.0) += w * a * b * c;
                        }
                    }
                }
            }
        }
        if acc.is_empty() {
            return None;
        }
        let (dofs, weights) = acc.into_iter().unzip();
        Some(RankOne { dofs, weights, stiffness: t.stiffness })
    }
}

/// `(M T)^T K (M T)` with `T = t (x) I_dpn` and `M` the row mask of free fine DOFs.
fn galerkin_element(k: &[f64], nd: usize, dpn: usize, nen: usize, t: &[[f64; 8]; 8], mask: &[bool; 24]) -> Vec<f64> {
    let mut kt = vec![0.0; nd * nd];
    for r in 0..nd {
        for a in 0..nen {
            for c in 0..dpn {
                let col = a * dpn + c;
                if !mask[col] {
                    continue;
                }
                let v = k[r * nd + col];
                if v == 0.0 {
                    continue;
                }
                for b in 0..nen {
                    let w = t[a][b];
                    if w != 0.0 {
                        kt[r * nd + b * dpn + c] += v * w;
                    }
                }
            }
        }
    }
    let mut out = vec![0.0; nd * nd];
    for a in 0..nen {
        for c in 0..dpn {
            let row = a * dpn + c;
            if !mask[row] {
                continue;
            }
            let src = &kt[row * nd..(row + 1) * nd];
            for b in 0..nen {
                let w = t[a][b];
                if w != 0.0 {
                    axpy(w, src, &mut out[(b * dpn + c) * nd..(b * dpn + c + 1) * nd]);
                }
            }
        }
    }
    out
}

/// Grid-dependent part of the hierarchy, built once per model.
#[derive(Debug, Clone)]
pub struct MultigridSetup {
    prolongations: Vec<Prolongation>,
    config: MultigridConfig,
}

impl MultigridSetup {
    pub fn new(model: &FeModel, config: &MultigridConfig) -> Result<Self> {
        config.validate()?;
        let mut prolongations = Vec::with_capacity(config.levels - 1);
        let mut grid = *model.grid();
        let mut dofs = Arc::clone(model.dofmap_arc());
        for _ in 1..config.levels {
            let p = Prolongation::new(grid, dofs)?;
            grid = p.coarse;
            dofs = Arc::clone(&p.coarse_dofs);
            prolongations.push(p);
        }
        Ok(Self { prolongations, config: config.clone() })
    }

    pub fn config(&self) -> &MultigridConfig {
        &self.config
    }

    pub fn prolongations(&self) -> &[Prolongation] {
        &self.prolongations
    }

    /// Galerkin operators and coarsest factorization for the given fine operator.
    pub fn build(&self, fine: &SymmetricOperator) -> Result<MultigridHierarchy> {
        let first = &self.prolongations[0];
        if fine.grid != first.fine || fine.dofmap.as_ref() != first.fine_dofs.as_ref() {
            return Err(Error::Configuration("operator does not match the multigrid setup".into()));
        }
        let mut levels = Vec::with_capacity(self.config.levels);
        levels.push(Level::new(fine.clone()));
        for p in &self.prolongations {
            let coarse = p.coarsen_operator(&levels.last().unwrap().op);
            levels.push(Level::new(coarse));
        }
        let coarsest = SkylineCholesky::factor(&levels.last().unwrap().op.to_csr())
            .map_err(|e| Error::Solver(format!("coarsest level: {e}")))?;
        Ok(MultigridHierarchy {
            levels,
            prolongations: self.prolongations.clone(),
            coarsest,
            config: self.config.clone(),
        })
    }
}

#[derive(Debug, Clone)]
struct Level {
    op: SymmetricOperator,
    /// `1 / diag(K)` on full-length vectors, zero at fixed DOFs.
    inv_diag: Vec<f64>,
}

impl Level {
    fn new(op: SymmetricOperator) -> Self {
        let diag = op.dofmap.scatter(&op.diagonal());
        let inv_diag = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
        Self { op, inv_diag }
    }
}

/// Per-level operators for one stiffness state.
#[derive(Debug, Clone)]
pub struct MultigridHierarchy {
    levels: Vec<Level>,
    prolongations: Vec<Prolongation>,
    coarsest: SkylineCholesky,
    config: MultigridConfig,
}

/// Builds the prolongations and the operator hierarchy in one go.
pub fn build_hierarchy(model: &FeModel, moduli: &[f64], config: &MultigridConfig) -> Result<MultigridHierarchy> {
    MultigridSetup::new(model, config)?.build(&model.assemble(moduli)?)
}

impl MultigridHierarchy {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn operator(&self, level: usize) -> &SymmetricOperator {
        &self.levels[level].op
    }

    pub fn prolongation(&self, level: usize) -> &Prolongation {
        &self.prolongations[level]
    }

    pub fn config(&self) -> &MultigridConfig {
        &self.config
    }

    /// One V-cycle on reduced fine-level vectors, starting from `u0`.
    pub fn vcycle(&self, f: &[f64], u0: &[f64]) -> Vec<f64> {
        let dofs = &self.levels[0].op.dofmap;
        let ff = dofs.scatter(f);
        let mut u = dofs.scatter(u0);
        let zero = u0.iter().all(|&v| v == 0.0);
        self.cycle(0, &ff, &mut u, zero);
        dofs.gather(&u)
    }

    fn smooth(&self, level: &Level, f: &[f64], u: &mut [f64], r: &mut [f64], u_is_zero: bool) {
        if u_is_zero {
            r.copy_from_slice(f);
        } else {
            level.op.apply_full(u, r);
            for (ri, fi) in r.iter_mut().zip(f) {
                *ri = fi - *ri;
            }
        }
        let w = self.config.damping;
        for ((ui, ri), di) in u.iter_mut().zip(r.iter()).zip(&level.inv_diag) {
            *ui += w * di * ri;
        }
    }

    fn cycle(&self, l: usize, f: &[f64], u: &mut [f64], mut u_is_zero: bool) {
        let level = &self.levels[l];
        if l + 1 == self.levels.len() {
            let x = self.coarsest.solve(&level.op.dofmap.gather(f));
            u.copy_from_slice(&level.op.dofmap.scatter(&x));
            return;
        }
        let mut r = vec![0.0; f.len()];
        for _ in 0..self.config.pre_smooth {
            self.smooth(level, f, u, &mut r, u_is_zero);
            u_is_zero = false;
        }
        level.op.apply_full(u, &mut r);
        for (ri, fi) in r.iter_mut().zip(f) {
            *ri = fi - *ri;
        }
        let p = &self.prolongations[l];
        let mut rc = vec![0.0; p.coarse.dof_count()];
        p.restrict_full(&r, &mut rc);
        let mut ec = vec![0.0; rc.len()];
        self.cycle(l + 1, &rc, &mut ec, true);
        p.prolong_full(&ec, &mut r);
        axpy(1.0, &r, u);
        for _ in 0..self.config.post_smooth {
            self.smooth(level, f, u, &mut r, false);
        }
    }
}

/// Result of one MGCG solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MgcgOutcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// `false` when the iteration cap stopped CG before the tolerance was met.
    pub converged: bool,
    /// Final `|f - K u| / |f|` from the CG recurrence.
    pub relative_residual: f64,
}

/// Conjugate gradients on the fine operator, preconditioned by one V-cycle with
/// zero initial guess. `u0` seeds CG itself.
pub fn mgcg(hierarchy: &MultigridHierarchy, f: &[f64], u0: Option<&[f64]>) -> Result<MgcgOutcome> {
    let op = &hierarchy.levels[0].op;
    let n = op.dim();
    check_len("load", f.len(), n)?;
    let fnorm = norm(f);
    if fnorm == 0.0 {
        return Ok(MgcgOutcome { u: vec![0.0; n], iterations: 0, converged: true, relative_residual: 0.0 });
    }
    let tol = hierarchy.config.tolerance;
    let mut u = match u0 {
        Some(u0) => {
            check_len("initial guess", u0.len(), n)?;
            u0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r: Vec<f64> = if u.iter().all(|&v| v == 0.0) {
        f.to_vec()
    } else {
        op.apply(&u).iter().zip(f).map(|(ku, fi)| fi - ku).collect()
    };
    let mut rel = norm(&r) / fnorm;
    if rel <= tol {
        return Ok(MgcgOutcome { u, iterations: 0, converged: true, relative_residual: rel });
    }
    let zero = vec![0.0; n];
    let mut z = hierarchy.vcycle(&r, &zero);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 1..=hierarchy.config.max_iterations {
        op.apply_into(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::Solver(format!("CG breakdown: p^T K p = {pq:e} at iteration {it}")));
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut u);
        axpy(-alpha, &q, &mut r);
        rel = norm(&r) / fnorm;
        if rel <= tol {
            return Ok(MgcgOutcome { u, iterations: it, converged: true, relative_residual: rel });
        }
        z = hierarchy.vcycle(&r, &zero);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    log::debug!("MGCG hit the iteration cap with relative residual {rel:e}");
    Ok(MgcgOutcome { u, iterations: hierarchy.config.max_iterations, converged: false, relative_residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::DofMap;

    fn cantilever(nelx: usize, nely: usize) -> FeModel {
        let grid = StructuredGrid::new_2d(nelx, nely).unwrap();
        let fixed: Vec<usize> = (0..=nely)
            .flat_map(|j| {
                let n = grid.node_index(0, j, 0);
                [2 * n, 2 * n + 1]
            })
            .collect();
        FeModel::new(grid, DofMap::new(&grid, fixed).unwrap(), 0.3).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(MultigridConfig { levels: 1, ..Default::default() }.validate().is_err());
        assert!(MultigridConfig { damping: 1.0, ..Default::default() }.validate().is_err());
        assert!(MultigridConfig { pre_smooth: 0, ..Default::default() }.validate().is_err());
        assert_eq!(MultigridConfig::for_3d().max_iterations, 50);
    }

    #[test]
    fn indivisible_grid_names_axis() {
        let m = cantilever(6, 6);
        let err = MultigridSetup::new(&m, &MultigridConfig { levels: 3, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
        assert!(err.to_string().contains("along x"), "{err}");
    }

    #[test]
    fn bilinear_stencil_weights() {
        let grid = StructuredGrid::new_2d(2, 2).unwrap();
        let dofs = Arc::new(DofMap::new(&grid, []).unwrap());
        let p = Prolongation::new(grid, dofs).unwrap();
        assert_eq!(p.coarse_grid().elements_per_axis(), [1, 1, 1]);
        // unit value at coarse node 0, x component
        let mut xc = vec![0.0; p.coarse_dofmap().free_count()];
        xc[0] = 1.0;
        let xf = p.prolong(&xc);
        let at = |i, j| xf[2 * grid.node_index(i, j, 0)];
        assert_eq!(at(0, 0), 1.0);
        assert_eq!(at(1, 0), 0.5);
        assert_eq!(at(0, 1), 0.5);
        assert_eq!(at(1, 1), 0.25);
        assert_eq!(at(2, 2), 0.0);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let m = cantilever(8, 4);
        let h = build_hierarchy(&m, &vec![1.0; 32], &MultigridConfig::default()).unwrap();
        let n = m.free_count();
        assert!(h.vcycle(&vec![0.0; n], &vec![0.0; n]).iter().all(|&v| v == 0.0));
        let out = mgcg(&h, &vec![0.0; n], None).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.u.iter().all(|&v| v == 0.0));
    }
}
