//! Unit-modulus stiffness matrices of the bilinear quadrilateral (plane stress,
//! unit thickness) and the trilinear hexahedron on unit elements.

use crate::error::{Error, Result};
use crate::fe::grid::{HEX_NODES, QUAD_NODES};

/// Dense symmetric element matrix for Young's modulus 1, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementStiffness {
    dim: usize,
    poisson: f64,
    size: usize,
    values: Vec<f64>,
}

impl ElementStiffness {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn poisson(&self) -> f64 {
        self.poisson
    }

    /// Number of rows (8 in 2D, 24 in 3D).
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.size + c]
    }

    /// `u^T K_e v` for element-local vectors.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        self.values
            .chunks_exact(self.size)
            .zip(u)
            .map(|(row, &ui)| ui * row.iter().zip(v).map(|(k, vj)| k * vj).sum::<f64>())
            .sum()
    }
}

fn constitutive(dim: usize, nu: f64) -> Vec<Vec<f64>> {
    if dim == 2 {
        let c = 1.0 / (1.0 - nu * nu);
        vec![
            vec![c, c * nu, 0.0],
            vec![c * nu, c, 0.0],
            vec![0.0, 0.0, c * (1.0 - nu) / 2.0],
        ]
    } else {
        let lambda = nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = 1.0 / (2.0 * (1.0 + nu));
        let mut d = vec![vec![0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = lambda;
            }
            d[i][i] = lambda + 2.0 * mu;
            d[i + 3][i + 3] = mu;
        }
        d
    }
}

/// Strain-displacement matrix at natural coordinates `xi` of a unit element.
fn strain_displacement(dim: usize, xi: [f64; 3]) -> Vec<Vec<f64>> {
    let offsets: &[[usize; 3]] = if dim == 2 { &QUAD_NODES } else { &HEX_NODES };
    let nen = offsets.len();
    // dN/dx = 2 dN/dxi for an element of edge length 1
    let grads: Vec<[f64; 3]> = offsets
        .iter()
        .map(|o| {
            let s = o.map(|v| 2.0 * v as f64 - 1.0);
            let f = |a: usize| 1.0 + s[a] * xi[a];
            let scale = 2.0 / (1usize << dim) as f64;
            let mut g = [0.0; 3];
            for a in 0..dim {
                let mut p = s[a];
                for b in (0..dim).filter(|&b| b != a) {
                    p *= f(b);
                }
                g[a] = scale * p;
            }
            g
        })
        .collect();

    let rows = if dim == 2 { 3 } else { 6 };
    let mut b = vec![vec![0.0; nen * dim]; rows];
    for (a, g) in grads.iter().enumerate() {
        let c = a * dim;
        if dim == 2 {
            b[0][c] = g[0];
            b[1][c + 1] = g[1];
            b[2][c] = g[1];
            b[2][c + 1] = g[0];
        } else {
            b[0][c] = g[0];
            b[1][c + 1] = g[1];
            b[2][c + 2] = g[2];
            b[3][c] = g[1];
            b[3][c + 1] = g[0];
            b[4][c + 1] = g[2];
            b[4][c + 2] = g[1];
            b[5][c] = g[2];
            b[5][c + 2] = g[0];
        }
    }
    b
}

/// Element stiffness by full Gauss integration (2 points per axis).
pub fn element_stiffness(dim: usize, nu: f64) -> Result<ElementStiffness> {
    if dim != 2 && dim != 3 {
        return Err(Error::Parameter(format!("dimension must be 2 or 3, got {dim}")));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::Parameter(format!("Poisson ratio must lie in [0, 0.5), got {nu}")));
    }
    let d = constitutive(dim, nu);
    let size = dim << dim;
    let g = 1.0 / 3f64.sqrt();
    let det_j = 1.0 / (1usize << dim) as f64;
    let mut k = vec![0.0; size * size];
    let npts = 1usize << dim;
    for p in 0..npts {
        let mut xi = [0.0; 3];
        for (a, x) in xi.iter_mut().enumerate().take(dim) {
            *x = if (p >> a) & 1 == 0 { -g } else { g };
        }
        let b = strain_displacement(dim, xi);
        let db: Vec<Vec<f64>> = d
            .iter()
            .map(|drow| {
                (0..size).map(|c| drow.iter().zip(&b).map(|(dv, brow)| dv * brow[c]).sum()).collect()
            })
            .collect();
        for r in 0..size {
            for c in 0..size {
                let s: f64 = b.iter().zip(&db).map(|(brow, dbrow)| brow[r] * dbrow[c]).sum();
                k[r * size + c] += s * det_j;
            }
        }
    }
    // exact symmetry
    for r in 0..size {
        for c in r + 1..size {
            let m = 0.5 * (k[r * size + c] + k[c * size + r]);
            k[r * size + c] = m;
            k[c * size + r] = m;
        }
    }
    Ok(ElementStiffness { dim, poisson: nu, size, values: k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(element_stiffness(2, 0.5).is_err());
        assert!(element_stiffness(2, -0.1).is_err());
        assert!(element_stiffness(4, 0.3).is_err());
    }

    #[test]
    fn translations_are_in_nullspace() {
        for dim in [2, 3] {
            for nu in [0.0, 0.3, 0.45] {
                let ke = element_stiffness(dim, nu).unwrap();
                for axis in 0..dim {
                    let t: Vec<f64> = (0..ke.size()).map(|i| (i % dim == axis) as u8 as f64).collect();
                    for r in 0..ke.size() {
                        let s: f64 = (0..ke.size()).map(|c| ke.get(r, c) * t[c]).sum();
                        assert!(s.abs() < 1e-14, "dim {dim} nu {nu} row {r}: {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_with_positive_diagonal() {
        let ke = element_stiffness(3, 0.3).unwrap();
        for r in 0..24 {
            assert!(ke.get(r, r) > 0.0);
            for c in 0..24 {
                assert_eq!(ke.get(r, c), ke.get(c, r));
            }
        }
    }
}
