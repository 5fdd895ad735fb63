//! Dense reference implementations shared by the integration tests. Everything
//! here is deliberately naive: full matrices, explicit loops, nalgebra solves.
#![allow(dead_code)]

use aarmr_core::fe::{element_stiffness, DofMap, FeModel, LoadCase, StructuredGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// Left edge (or face) fully clamped.
pub fn clamped_left(grid: &StructuredGrid) -> DofMap {
    let [_, ny, nz] = grid.nodes_per_axis();
    let d = grid.dofs_per_node();
    let mut fixed = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            let n = grid.node_index(0, j, k);
            fixed.extend((0..d).map(|c| n * d + c));
        }
    }
    DofMap::new(grid, fixed).unwrap()
}

pub fn cantilever_2d(nelx: usize, nely: usize) -> (FeModel, Vec<f64>) {
    let grid = StructuredGrid::new_2d(nelx, nely).unwrap();
    let dofmap = clamped_left(&grid);
    let load = LoadCase::new().point(grid.node_index(nelx, nely / 2, 0), 1, -1.0);
    let f = aarmr_core::fe::build_load(&grid, &dofmap, &load).unwrap();
    (FeModel::new(grid, dofmap, 0.3).unwrap(), f)
}

pub fn cantilever_3d(nelx: usize, nely: usize, nelz: usize) -> (FeModel, Vec<f64>) {
    let grid = StructuredGrid::new_3d(nelx, nely, nelz).unwrap();
    let dofmap = clamped_left(&grid);
    let load = LoadCase::new().point(grid.node_index(nelx, nely / 2, nelz / 2), 1, -1.0);
    let f = aarmr_core::fe::build_load(&grid, &dofmap, &load).unwrap();
    (FeModel::new(grid, dofmap, 0.3).unwrap(), f)
}

/// Global DOFs of element `e`, computed from first principles.
pub fn element_dofs(grid: &StructuredGrid, e: usize) -> Vec<usize> {
    let [ex, ey, _] = grid.elements_per_axis();
    let [nx, ny, _] = grid.nodes_per_axis();
    let (i, j, k) = (e % ex, (e / ex) % ey, e / (ex * ey));
    let corners: Vec<(usize, usize, usize)> = if grid.dim() == 2 {
        vec![(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)]
    } else {
        vec![(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    };
    let d = grid.dim();
    corners
        .into_iter()
        .flat_map(|(a, b, c)| {
            let n = (i + a) + nx * ((j + b) + ny * (k + c));
            (0..d).map(move |comp| n * d + comp)
        })
        .collect()
}

/// Full (all-DOF) dense stiffness, springs included.
pub fn dense_full(model: &FeModel, moduli: &[f64]) -> DMatrix<f64> {
    let grid = model.grid();
    let nd = grid.dof_count();
    let ke = element_stiffness(grid.dim(), 0.3).unwrap();
    let mut k = DMatrix::zeros(nd, nd);
    for e in 0..grid.element_count() {
        let dofs = element_dofs(grid, e);
        for (a, &da) in dofs.iter().enumerate() {
            for (b, &db) in dofs.iter().enumerate() {
                k[(da, db)] += moduli[e] * ke.get(a, b);
            }
        }
    }
    for &(d, s) in model.dofmap().springs() {
        k[(d, d)] += s;
    }
    k
}

/// Dense stiffness reduced to the free DOFs by deleting fixed rows and columns.
pub fn dense_reduced(model: &FeModel, moduli: &[f64]) -> DMatrix<f64> {
    let full = dense_full(model, moduli);
    let free = model.dofmap().free();
    DMatrix::from_fn(free.len(), free.len(), |i, j| full[(free[i], free[j])])
}

pub fn dense_solve(k: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    let lu = k.clone().lu();
    lu.solve(&DVector::from_column_slice(f)).unwrap().as_slice().to_vec()
}

pub fn dense_mul(k: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (k * DVector::from_column_slice(x)).as_slice().to_vec()
}
