//! Global stiffness operators over the free DOFs.
//!
//! Operators are never stored as a global matrix: `apply` loops over elements,
//! gathers the element displacement, multiplies by the (scaled) element matrix
//! and scatters back. An explicit CSR copy is available through
//! [`SymmetricOperator::to_csr`] for factorization and checks.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::fe::element::{element_stiffness, ElementStiffness};
use crate::fe::grid::{DofMap, StructuredGrid};

/// Symmetric linear map on reduced (free-DOF) vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }
}

/// Static part of a finite-element model: grid, supports and element matrix.
#[derive(Debug, Clone)]
pub struct FeModel {
    grid: StructuredGrid,
    dofmap: Arc<DofMap>,
    ke: Arc<ElementStiffness>,
}

impl FeModel {
    pub fn new(grid: StructuredGrid, dofmap: DofMap, poisson: f64) -> Result<Self> {
        if dofmap.total() != grid.dof_count() {
            return Err(Error::Configuration(format!(
                "DOF map covers {} DOFs, grid has {}",
                dofmap.total(),
                grid.dof_count()
            )));
        }
        let ke = element_stiffness(grid.dim(), poisson)?;
        Ok(Self { grid, dofmap: Arc::new(dofmap), ke: Arc::new(ke) })
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofmap
    }

    pub(crate) fn dofmap_arc(&self) -> &Arc<DofMap> {
        &self.dofmap
    }

    pub fn element_matrix(&self) -> &ElementStiffness {
        &self.ke
    }

    pub fn free_count(&self) -> usize {
        self.dofmap.free_count()
    }

    /// Stiffness operator for per-element Young's moduli, springs included.
    pub fn assemble(&self, moduli: &[f64]) -> Result<SymmetricOperator> {
        check_len("moduli", moduli.len(), self.grid.element_count())?;
        if let Some((e, &m)) = moduli.iter().enumerate().find(|(_, m)| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::Parameter(format!("modulus of element {e} must be positive, got {m}")));
        }
        Ok(SymmetricOperator {
            grid: self.grid,
            dofmap: Arc::clone(&self.dofmap),
            matrices: ElementMatrices::Scaled { base: Arc::clone(&self.ke), scale: moduli.to_vec() },
            springs: self
                .dofmap
                .springs()
                .iter()
                .map(|&(d, k)| RankOne { dofs: vec![d], weights: vec![1.0], stiffness: k })
                .collect(),
        })
    }

    /// `(K(new) - K(old)) x`, computed element by element without forming the difference matrix.
    pub fn apply_delta_k(&self, x: &[f64], moduli_new: &[f64], moduli_old: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.element_count();
        check_len("new moduli", moduli_new.len(), n)?;
        check_len("old moduli", moduli_old.len(), n)?;
        check_len("vector", x.len(), self.free_count())?;
        let delta = SymmetricOperator {
            grid: self.grid,
            dofmap: Arc::clone(&self.dofmap),
            matrices: ElementMatrices::Scaled {
                base: Arc::clone(&self.ke),
                scale: moduli_new.iter().zip(moduli_old).map(|(a, b)| a - b).collect(),
            },
            springs: Vec::new(),
        };
        Ok(delta.apply(x))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum ElementMatrices {
    /// Every element shares one matrix, scaled per element.
    Scaled { base: Arc<ElementStiffness>, scale: Vec<f64> },
    /// One dense row-major matrix per element (Galerkin coarse levels).
    Dense { size: usize, values: Vec<f64> },
}

impl ElementMatrices {
    #[inline]
    pub(crate) fn element(&self, e: usize) -> (&[f64], f64) {
        match self {
            Self::Scaled { base, scale } => (base.values(), scale[e]),
            Self::Dense { size, values } => {
                let n = size * size;
                (&values[e * n..(e + 1) * n], 1.0)
            }
        }
    }
}

/// Grounded rank-one term `k w w^T` on a handful of global DOFs. Springs are
/// rank-one with a single unit weight; Galerkin coarsening spreads them.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RankOne {
    pub dofs: Vec<usize>,
    pub weights: Vec<f64>,
    pub stiffness: f64,
}

/// Element-assembled symmetric operator restricted to the free DOFs.
#[derive(Debug, Clone)]
pub struct SymmetricOperator {
    pub(crate) grid: StructuredGrid,
    pub(crate) dofmap: Arc<DofMap>,
    pub(crate) matrices: ElementMatrices,
    pub(crate) springs: Vec<RankOne>,
}

impl SymmetricOperator {
    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofmap
    }

    /// Per-element moduli when the operator was assembled from a shared element matrix.
    pub fn moduli(&self) -> Option<&[f64]> {
        match &self.matrices {
            ElementMatrices::Scaled { scale, .. } => Some(scale),
            ElementMatrices::Dense { .. } => None,
        }
    }

    /// `y = K x` on full-length vectors; fixed entries of `x` must be zero.
    pub(crate) fn apply_full(&self, xf: &[f64], yf: &mut [f64]) {
        yf.iter_mut().for_each(|v| *v = 0.0);
        let dpn = self.grid.dofs_per_node();
        let nd = self.grid.dofs_per_element();
        let offsets = self.grid.node_offsets();
        let [ex, ey, ez] = self.grid.elements_per_axis();
        let mut ue = [0.0; 24];
        let mut ye = [0.0; 24];
        let mut e = 0;
        for k in 0..ez {
            for j in 0..ey {
                for i in 0..ex {
                    let (m, s) = self.matrices.element(e);
                    e += 1;
                    if s == 0.0 {
                        continue;
                    }
                    let base = self.grid.node_index(i, j, k);
                    for (a, off) in offsets.iter().enumerate() {
                        let g = (base + off) * dpn;
                        ue[a * dpn..(a + 1) * dpn].copy_from_slice(&xf[g..g + dpn]);
                    }
                    for (r, row) in m.chunks_exact(nd).enumerate() {
                        ye[r] = s * row.iter().zip(&ue[..nd]).map(|(a, b)| a * b).sum::<f64>();
                    }
                    for (a, off) in offsets.iter().enumerate() {
                        let g = (base + off) * dpn;
                        for c in 0..dpn {
                            yf[g + c] += ye[a * dpn + c];
                        }
                    }
                }
            }
        }
        for t in &self.springs {
            let s: f64 = t.dofs.iter().zip(&t.weights).map(|(&d, w)| w * xf[d]).sum();
            for (&d, w) in t.dofs.iter().zip(&t.weights) {
                yf[d] += t.stiffness * w * s;
            }
        }
        for &d in self.dofmap.fixed() {
            yf[d] = 0.0;
        }
    }

    /// Diagonal over the free DOFs.
    pub fn diagonal(&self) -> Vec<f64> {
        let dpn = self.grid.dofs_per_node();
        let nd = self.grid.dofs_per_element();
        let mut full = vec![0.0; self.grid.dof_count()];
        for e in 0..self.grid.element_count() {
            let (m, s) = self.matrices.element(e);
            for (r, n) in self.grid.element_nodes(e).into_iter().enumerate() {
                for c in 0..dpn {
                    let l = r * dpn + c;
                    full[n * dpn + c] += s * m[l * nd + l];
                }
            }
        }
        for t in &self.springs {
            for (&d, w) in t.dofs.iter().zip(&t.weights) {
                full[d] += t.stiffness * w * w;
            }
        }
        self.dofmap.gather(&full)
    }

    /// Explicit sparse copy over the free DOFs.
    pub fn to_csr(&self) -> CsrMatrix {
        let n = self.dofmap.free_count();
        let nd = self.grid.dofs_per_element();
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let mut local = vec![None; nd];
        for e in 0..self.grid.element_count() {
            let (m, s) = self.matrices.element(e);
            for (l, d) in self.grid.element_dofs(e).into_iter().enumerate() {
                local[l] = self.dofmap.free_index(d);
            }
            for r in 0..nd {
                let Some(fr) = local[r] else { continue };
                for c in 0..nd {
                    if let Some(fc) = local[c] {
                        rows[fr].push((fc as u32, s * m[r * nd + c]));
                    }
                }
            }
        }
        for t in &self.springs {
            for (&di, wi) in t.dofs.iter().zip(&t.weights) {
                let Some(fi) = self.dofmap.free_index(di) else { continue };
                for (&dj, wj) in t.dofs.iter().zip(&t.weights) {
                    if let Some(fj) = self.dofmap.free_index(dj) {
                        rows[fi].push((fj as u32, t.stiffness * wi * wj));
                    }
                }
            }
        }
        CsrMatrix::from_rows(n, rows)
    }
}

impl LinearOperator for SymmetricOperator {
    fn dim(&self) -> usize {
        self.dofmap.free_count()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let xf = self.dofmap.scatter(x);
        let mut yf = vec![0.0; xf.len()];
        self.apply_full(&xf, &mut yf);
        for (yi, &d) in y.iter_mut().zip(self.dofmap.free()) {
            *yi = yf[d];
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted per-row `(column, value)` lists, summing duplicates.
    pub(crate) fn from_rows(n: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, values }
    }

    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| dense[i * n + j] != 0.0)
                    .map(|j| (j as u32, dense[i * n + j]))
                    .collect()
            })
            .collect();
        Self::from_rows(n, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[i * self.n + j] = v;
            }
        }
        d
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cantilever(nelx: usize, nely: usize) -> FeModel {
        let grid = StructuredGrid::new_2d(nelx, nely).unwrap();
        let fixed = (0..=nely).flat_map(|j| {
            let n = grid.node_index(0, j, 0);
            [2 * n, 2 * n + 1]
        });
        let dofmap = DofMap::new(&grid, fixed.collect::<Vec<_>>()).unwrap();
        FeModel::new(grid, dofmap, 0.3).unwrap()
    }

    #[test]
    fn rejects_nonpositive_moduli() {
        let m = cantilever(2, 1);
        assert!(m.assemble(&[1.0, 0.0]).is_err());
        assert!(m.assemble(&[1.0]).is_err());
        assert!(m.assemble(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn doubling_moduli_doubles_entries() {
        let m = cantilever(3, 2);
        let e: Vec<f64> = (0..6).map(|i| 0.1 + i as f64 * 0.15).collect();
        let e2: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
        let a = m.assemble(&e).unwrap().to_csr();
        let b = m.assemble(&e2).unwrap().to_csr();
        for (x, y) in a.to_dense().iter().zip(b.to_dense()) {
            assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn delta_is_zero_for_equal_moduli_and_local() {
        let m = cantilever(4, 2);
        let x: Vec<f64> = (0..m.free_count()).map(|i| (i as f64).sin()).collect();
        let a = vec![0.7; 8];
        assert!(m.apply_delta_k(&x, &a, &a).unwrap().iter().all(|&v| v == 0.0));
        let mut b = a.clone();
        b[5] = 0.2;
        let d = m.apply_delta_k(&x, &b, &a).unwrap();
        let support: Vec<usize> = m
            .grid()
            .element_dofs(5)
            .into_iter()
            .filter_map(|d| m.dofmap().free_index(d))
            .collect();
        for (i, v) in d.iter().enumerate() {
            if !support.contains(&i) {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(d.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn diagonal_matches_csr() {
        let mut m = cantilever(3, 3);
        let mut dm = m.dofmap().clone();
        dm.add_spring(2 * m.grid().node_index(3, 0, 0), 0.25).unwrap();
        m = FeModel::new(*m.grid(), dm, 0.3).unwrap();
        let op = m.assemble(&vec![0.5; 9]).unwrap();
        let csr = op.to_csr();
        for (i, d) in op.diagonal().iter().enumerate() {
            assert!((d - csr.get(i, i)).abs() < 1e-14);
        }
    }
}
