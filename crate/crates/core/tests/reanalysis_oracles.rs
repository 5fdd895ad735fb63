mod common;

use aarmr_core::fe::{CsrMatrix, FeModel, LinearOperator};
use aarmr_core::reanalysis::{
    build_carm, reanalysis_solve, reduced_solve, orthonormalize, Parm, ProjectedInverse, ReanalysisConfig,
    ReanalysisState, SolvePath,
};
use aarmr_core::solver::{build_hierarchy, mgcg, MgcgOutcome, MultigridConfig};
use aarmr_core::Result;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_spd(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * n as f64
}

fn csr(m: &DMatrix<f64>) -> CsrMatrix {
    let n = m.nrows();
    CsrMatrix::from_dense(n, &(0..n * n).map(|k| m[(k / n, k % n)]).collect::<Vec<_>>())
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect()
}

/// Dense `Φ (ΦᵀKΦ)⁻¹ Φᵀ` with `Φ` holding normalized columns.
fn dense_projected_inverse(k: &DMatrix<f64>, cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = k.nrows();
    let phi = DMatrix::from_fn(n, cols.len(), |i, j| {
        let s: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j][i] / s
    });
    let kphi = phi.transpose() * k * &phi;
    &phi * kphi.try_inverse().unwrap() * phi.transpose()
}

#[test]
fn projected_inverse_matches_dense_algebra() {
    let mut r = rng(1);
    let k = random_spd(&mut r, 10);
    let q = DMatrix::from_fn(10, 2, |_, _| r.gen_range(-1.0..1.0)).qr().q();
    let cols = columns(&q);
    let mut parm = Parm::new(2);
    for c in &cols {
        parm.insert(c).unwrap();
    }
    let inv = ProjectedInverse::new(&parm, &csr(&k)).unwrap();
    let oracle = dense_projected_inverse(&k, &cols);
    for _ in 0..5 {
        let v = random_vec(&mut r, 10);
        assert!(rel_err(&inv.apply(&v), &dense_mul(&oracle, &v)) < 1e-10);
    }
}

#[test]
fn complete_projection_is_the_exact_inverse() {
    let mut r = rng(2);
    let n = 6;
    let k = random_spd(&mut r, n);
    let mut parm = Parm::new(n);
    for i in [3, 0, 5, 1, 4, 2] {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        parm.insert(&e).unwrap();
    }
    let inv = ProjectedInverse::new(&parm, &csr(&k)).unwrap();
    let v = random_vec(&mut r, n);
    let exact = dense_solve(&k, &v);
    assert!(rel_err(&inv.apply(&v), &exact) < 1e-12);
}

fn perturbed_cantilever() -> (FeModel, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (model, f) = cantilever_2d(8, 4);
    let mut r = rng(3);
    let old: Vec<f64> = (0..32).map(|_| r.gen_range(0.05..1.0)).collect();
    let new: Vec<f64> = old.iter().map(|v| v * r.gen_range(0.8..1.25)).collect();
    (model, f, old, new)
}

#[test]
fn carm_recurrence_matches_dense_oracle() {
    let (model, f, old, new) = perturbed_cantilever();
    let k0 = dense_reduced(&model, &old);
    let k = dense_reduced(&model, &new);
    let dk = &k - &k0;
    let mut r = rng(4);
    // PARM from two older-looking solutions: exact solves on nearby designs
    let mut parm = Parm::new(2);
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let m: Vec<f64> = old.iter().map(|v| v * r.gen_range(0.9..1.1)).collect();
        let u = dense_solve(&dense_reduced(&model, &m), &f);
        parm.insert(&u).unwrap();
        snapshots.push(u);
    }
    let seed = dense_solve(&k0, &f);
    let inv = ProjectedInverse::new(&parm, &model.assemble(&old).unwrap()).unwrap();
    let carm = build_carm(&model, &inv, &new, &old, &seed, 4).unwrap();

    let c = -dense_projected_inverse(&k0, &snapshots) * dk;
    let mut col = DVector::from_column_slice(&seed);
    for (i, raw) in carm.raw.iter().enumerate() {
        assert!(rel_err(raw, col.as_slice()) < 1e-10, "column {i}: {}", rel_err(raw, col.as_slice()));
        col = &c * col;
    }

    // orthonormal basis spanning the same space
    let m = carm.rank();
    for i in 0..m {
        for j in 0..m {
            let d: f64 = carm.basis[i].iter().zip(&carm.basis[j]).map(|(a, b)| a * b).sum();
            assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }
    for raw in &carm.raw {
        let mut rem = raw.clone();
        for q in &carm.basis {
            let c: f64 = q.iter().zip(raw).map(|(a, b)| a * b).sum();
            rem.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
        }
        let rn: f64 = rem.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n: f64 = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rn <= 1e-10 * n.max(1e-300));
    }
}

#[test]
fn unchanged_design_gives_rank_one_basis() {
    let (model, f, old, _) = perturbed_cantilever();
    let u = dense_solve(&dense_reduced(&model, &old), &f);
    let mut parm = Parm::new(2);
    parm.insert(&u).unwrap();
    parm.insert(&f).unwrap();
    let inv = ProjectedInverse::new(&parm, &model.assemble(&old).unwrap()).unwrap();
    let carm = build_carm(&model, &inv, &old, &old, &u, 3).unwrap();
    assert_eq!(carm.rank(), 1);
    let n: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit: Vec<f64> = u.iter().map(|v| v / n).collect();
    let flipped: Vec<f64> = unit.iter().map(|v| -v).collect();
    let e = rel_err(&carm.basis[0], &unit).min(rel_err(&carm.basis[0], &flipped));
    assert!(e < 1e-12);
    // the single-column CARM reduces to the normalized seed as well
    let one = build_carm(&model, &inv, &old, &old, &u, 1).unwrap();
    assert_eq!(one.rank(), 1);
}

/// Dense Galerkin oracle: `y = (RᵀKR)⁻¹ Rᵀ f`.
fn dense_galerkin(k: &DMatrix<f64>, basis: &[Vec<f64>], f: &[f64]) -> (Vec<f64>, f64) {
    let n = k.nrows();
    let r = DMatrix::from_fn(n, basis.len(), |i, j| basis[j][i]);
    let fv = DVector::from_column_slice(f);
    let y = (r.transpose() * k * &r).try_inverse().unwrap() * (r.transpose() * &fv);
    let u = &r * y;
    let eps = (k * &u - &fv).norm() / fv.norm();
    (u.as_slice().to_vec(), eps)
}

#[test]
fn reduced_solve_matches_dense_galerkin() {
    let mut r = rng(5);
    for diagonal in [true, false] {
        let k = if diagonal {
            DMatrix::from_diagonal(&DVector::from_fn(10, |i, _| 1.0 + i as f64))
        } else {
            random_spd(&mut r, 10)
        };
        let f = random_vec(&mut r, 10);
        let raw: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 10)).collect();
        let basis = orthonormalize(&raw).unwrap();
        let sol = reduced_solve(&csr(&k), &basis, &f).unwrap();
        let (u, eps) = dense_galerkin(&k, &basis, &f);
        assert!(rel_err(&sol.u, &u) < 1e-10);
        assert!((sol.epsilon - eps).abs() < 1e-10 * eps.max(1.0));
    }
}

#[test]
fn exact_basis_gives_zero_residual() {
    let mut r = rng(6);
    let k = random_spd(&mut r, 8);
    let f = random_vec(&mut r, 8);
    let exact = dense_solve(&k, &f);
    let n: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    let basis = vec![exact.iter().map(|v| v / n).collect::<Vec<_>>()];
    let sol = reduced_solve(&csr(&k), &basis, &f).unwrap();
    assert!(sol.epsilon < 1e-12);
    assert!(rel_err(&sol.u, &exact) < 1e-12);

    let small = random_spd(&mut r, 4);
    let g = random_vec(&mut r, 4);
    let full = orthonormalize(&(0..4).map(|_| random_vec(&mut r, 4)).collect::<Vec<_>>()).unwrap();
    assert_eq!(full.len(), 4);
    let sol = reduced_solve(&csr(&small), &full, &g).unwrap();
    assert!(sol.epsilon < 1e-12);
    assert!(rel_err(&sol.u, &dense_solve(&small, &g)) < 1e-12);
}

fn mgcg_for(model: &FeModel, tol: f64) -> impl FnMut(&aarmr_core::fe::SymmetricOperator) -> Box<dyn FnMut(&[f64], Option<&[f64]>) -> Result<MgcgOutcome>> + '_ {
    move |op| {
        let config = MultigridConfig { levels: 2, tolerance: tol, ..MultigridConfig::for_2d() };
        let h = build_hierarchy(model, op.moduli().unwrap(), &config).unwrap();
        Box::new(move |f: &[f64], u0: Option<&[f64]>| mgcg(&h, f, u0))
    }
}

/// Designs drifting slowly, as in a late-stage optimization.
fn design_sequence(count: usize, drift: f64) -> Vec<Vec<f64>> {
    let mut r = rng(7);
    let mut m: Vec<f64> = (0..32).map(|_| r.gen_range(0.2..1.0)).collect();
    (0..count)
        .map(|_| {
            m.iter_mut().for_each(|v| *v *= r.gen_range(1.0 - drift..1.0 + drift));
            m.clone()
        })
        .collect()
}

#[test]
fn scripted_trace_with_zero_tolerance_rotates_parm() {
    let (model, f) = cantilever_2d(8, 4);
    let config = ReanalysisConfig { parm_size: 2, carm_size: 2, tolerance: 0.0, activation: 3 };
    let mut state = ReanalysisState::new(&config);
    let mut solver = mgcg_for(&model, 1e-10);
    let mut solutions = Vec::new();
    for (i, moduli) in design_sequence(6, 0.03).into_iter().enumerate() {
        let loop_index = i + 1;
        let op = model.assemble(&moduli).unwrap();
        let mut run = solver(&op);
        let out = reanalysis_solve(&mut state, &model, &op, &f, loop_index, &config, &mut *run).unwrap();
        if loop_index <= 3 {
            assert_eq!(out.path, SolvePath::Warmup);
            assert!(out.epsilon.is_none());
        } else {
            assert_eq!(out.path, SolvePath::CarmRejected);
            assert!(out.epsilon.is_some());
        }
        assert!(out.mgcg_residual.unwrap() <= 1e-10);
        assert_eq!(state.u_last().unwrap(), out.u.as_slice());
        assert_eq!(state.reference_moduli().unwrap(), moduli.as_slice());
        // PARM is empty until it is filled just before activation
        let expected = if loop_index == 1 { 0 } else { 2.min(loop_index - 1) };
        assert_eq!(state.parm().len(), expected, "loop {loop_index}");
        solutions.push(out.u);
        if loop_index >= 3 {
            let want: Vec<Vec<f64>> = solutions[loop_index - 2..]
                .iter()
                .map(|u| {
                    let n: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                    u.iter().map(|v| v / n).collect()
                })
                .collect();
            let got: Vec<&[f64]> = state.parm().columns().collect();
            for (g, w) in got.iter().zip(&want) {
                assert!(rel_err(g, w) < 1e-15);
            }
        }
    }
    let c = state.counters();
    assert_eq!(c.mgcg_evaluations, 6);
    assert_eq!(c.carm_solves, 3);
    assert_eq!((c.accepted, c.rejected), (0, 3));
}

#[test]
fn accepted_reduced_solutions_respect_tolerance() {
    let (model, f) = cantilever_2d(8, 4);
    let config = ReanalysisConfig { parm_size: 2, carm_size: 3, tolerance: 1e-2, activation: 3 };
    let mut state = ReanalysisState::new(&config);
    let mut solver = mgcg_for(&model, 1e-10);
    let mut accepted = 0;
    for (i, moduli) in design_sequence(12, 0.002).into_iter().enumerate() {
        let op = model.assemble(&moduli).unwrap();
        let mut run = solver(&op);
        let out = reanalysis_solve(&mut state, &model, &op, &f, i + 1, &config, &mut *run).unwrap();
        let k = dense_reduced(&model, &moduli);
        let res: Vec<f64> = dense_mul(&k, &out.u).iter().zip(&f).map(|(a, b)| a - b).collect();
        let rel = res.iter().map(|v| v * v).sum::<f64>().sqrt() / f.iter().map(|v| v * v).sum::<f64>().sqrt();
        match out.path {
            SolvePath::CarmAccepted => {
                accepted += 1;
                let eps = out.epsilon.unwrap();
                assert!(eps < config.tolerance);
                assert!((rel - eps).abs() < 1e-10, "{rel} vs {eps}");
                assert!(out.cg_iterations.is_none());
            }
            _ => assert!(rel < 1e-9),
        }
    }
    assert!(accepted > 0, "slowly drifting designs should be reanalysed");
    assert!(state.counters().carm_solves >= accepted);
}

#[test]
fn unchanged_design_after_exact_solve_is_accepted() {
    let (model, f) = cantilever_2d(8, 4);
    let config = ReanalysisConfig { parm_size: 2, carm_size: 2, tolerance: 1e-6, activation: 3 };
    let mut state = ReanalysisState::new(&config);
    let mut solver = mgcg_for(&model, 1e-12);
    let designs = design_sequence(3, 0.03);
    let mut last = Vec::new();
    for (i, moduli) in designs.iter().enumerate() {
        let op = model.assemble(moduli).unwrap();
        last = reanalysis_solve(&mut state, &model, &op, &f, i + 1, &config, &mut *solver(&op)).unwrap().u;
    }
    let op = model.assemble(&designs[2]).unwrap();
    let out = reanalysis_solve(&mut state, &model, &op, &f, 4, &config, &mut *solver(&op)).unwrap();
    assert_eq!(out.path, SolvePath::CarmAccepted);
    assert!(out.epsilon.unwrap() < 1e-10);
    assert!(rel_err(&out.u, &last) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn galerkin_orthogonality_and_scale_equivariance(
        seed in 0u64..10_000,
        rank in 1usize..5,
        alpha in 1e-3f64..1e3,
    ) {
        let mut r = rng(seed);
        let k = random_spd(&mut r, 12);
        let f = random_vec(&mut r, 12);
        let basis = orthonormalize(&(0..rank).map(|_| random_vec(&mut r, 12)).collect::<Vec<_>>()).unwrap();
        let op = csr(&k);
        let sol = reduced_solve(&op, &basis, &f).unwrap();
        let ku = op.apply(&sol.u);
        let fnorm: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        for q in &basis {
            let g: f64 = q.iter().zip(ku.iter().zip(&f)).map(|(qi, (a, b))| qi * (a - b)).sum();
            prop_assert!(g.abs() <= 1e-10 * fnorm);
        }
        let scaled: Vec<f64> = f.iter().map(|v| alpha * v).collect();
        let sol2 = reduced_solve(&op, &basis, &scaled).unwrap();
        let expect: Vec<f64> = sol.u.iter().map(|v| alpha * v).collect();
        prop_assert!(rel_err(&sol2.u, &expect) < 1e-12);
        prop_assert!((sol2.epsilon - sol.epsilon).abs() <= 1e-12 * sol.epsilon.max(1e-300) + 1e-15);
    }

    #[test]
    fn parm_keeps_last_normalized_inserts(
        vectors in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 5), 1..8),
        capacity in 1usize..4,
    ) {
        let mut parm = Parm::new(capacity);
        for v in &vectors {
            parm.insert(v).unwrap();
        }
        let keep = vectors.len().min(capacity);
        let cols: Vec<&[f64]> = parm.columns().collect();
        prop_assert_eq!(cols.len(), keep);
        for (c, v) in cols.iter().zip(&vectors[vectors.len() - keep..]) {
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((c.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
            for (a, b) in c.iter().zip(v) {
                prop_assert!((a - b / n).abs() < 1e-15);
            }
        }
    }
}
