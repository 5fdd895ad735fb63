//! SIMP interpolation, the cone-weighted density filter and element-wise
//! stiffness sensitivities.

use crate::error::{check_len, Error, Result};
use crate::fe::{FeModel, StructuredGrid};

/// Modified SIMP law `E(ρ) = E_min + (E₀ − E_min) ρ^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpLaw {
    pub e0: f64,
    pub emin: f64,
    pub penalty: f64,
}

impl Default for SimpLaw {
    fn default() -> Self {
        Self { e0: 1.0, emin: 1e-9, penalty: 3.0 }
    }
}

impl SimpLaw {
    pub fn new(e0: f64, emin: f64, penalty: f64) -> Result<Self> {
        let law = Self { e0, emin, penalty };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.emin > 0.0 && self.e0 > self.emin && self.e0.is_finite()) {
            return Err(Error::Parameter(format!(
                "need 0 < E_min < E0, got E_min = {}, E0 = {}",
                self.emin, self.e0
            )));
        }
        if !(self.penalty >= 1.0 && self.penalty.is_finite()) {
            return Err(Error::Parameter(format!("penalty must be >= 1, got {}", self.penalty)));
        }
        Ok(())
    }

    #[inline]
    pub fn modulus(&self, rho: f64) -> f64 {
        self.emin + (self.e0 - self.emin) * rho.powf(self.penalty)
    }

    #[inline]
    pub fn derivative(&self, rho: f64) -> f64 {
        self.penalty * (self.e0 - self.emin) * rho.powf(self.penalty - 1.0)
    }

    /// Per-element moduli; densities must lie in `[0, 1]`.
    pub fn moduli(&self, rho: &[f64]) -> Result<Vec<f64>> {
        if let Some((e, &r)) = rho.iter().enumerate().find(|(_, r)| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Parameter(format!("density of element {e} is {r}, outside [0, 1]")));
        }
        Ok(rho.iter().map(|&r| self.modulus(r)).collect())
    }
}

/// Linear density filter `ρ̃ = F ρ` with cone weights `max(0, r − d)` between
/// element centers, stored as compressed neighbor lists.
#[derive(Debug, Clone)]
pub struct FilterKernel {
    radius: f64,
    start: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
    sums: Vec<f64>,
}

impl FilterKernel {
    /// Neighborhoods for radius `r` in element lengths.
    pub fn new(grid: &StructuredGrid, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Parameter(format!("filter radius must be positive, got {radius}")));
        }
        let [ex, ey, ez] = grid.elements_per_axis();
        let reach = radius.ceil() as isize - 1;
        let rz = if grid.dim() == 3 { reach } else { 0 };
        let n = grid.element_count();
        let mut start = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        let mut sums = Vec::with_capacity(n);
        start.push(0);
        for e in 0..n {
            let [i, j, k] = grid.element_coords(e).map(|c| c as isize);
            let mut sum = 0.0;
            for dk in -rz..=rz {
                let kk = k + dk;
                if kk < 0 || kk >= ez as isize {
                    continue;
                }
                for dj in -reach..=reach {
                    let jj = j + dj;
                    if jj < 0 || jj >= ey as isize {
                        continue;
                    }
                    for di in -reach..=reach {
                        let ii = i + di;
                        if ii < 0 || ii >= ex as isize {
                            continue;
                        }
                        let d = ((di * di + dj * dj + dk * dk) as f64).sqrt();
                        let w = radius - d;
                        if w > 0.0 {
                            neighbors.push(grid.element_index(ii as usize, jj as usize, kk as usize) as u32);
                            weights.push(w);
                            sum += w;
                        }
                    }
                }
            }
            sums.push(sum);
            start.push(neighbors.len());
        }
        Ok(Self { radius, start, neighbors, weights, sums })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn element_count(&self) -> usize {
        self.sums.len()
    }

    /// Neighbors of element `e` with their raw cone weights.
    pub fn neighborhood(&self, e: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.start[e]..self.start[e + 1];
        self.neighbors[range.clone()].iter().map(|&j| j as usize).zip(self.weights[range].iter().copied())
    }

    /// Sum of the cone weights around element `e`.
    pub fn weight_sum(&self, e: usize) -> f64 {
        self.sums[e]
    }

    /// Physical densities `F ρ`.
    pub fn filter(&self, rho: &[f64]) -> Result<Vec<f64>> {
        check_len("densities", rho.len(), self.element_count())?;
        Ok((0..self.element_count())
            .map(|e| self.neighborhood(e).map(|(j, w)| w * rho[j]).sum::<f64>() / self.sums[e])
            .collect())
    }

    /// Design sensitivities `Fᵀ g` from sensitivities with respect to the physical densities.
    pub fn chain(&self, d_physical: &[f64]) -> Result<Vec<f64>> {
        check_len("sensitivities", d_physical.len(), self.element_count())?;
        let mut out = vec![0.0; self.element_count()];
        for (e, &g) in d_physical.iter().enumerate() {
            let scaled = g / self.sums[e];
            for (j, w) in self.neighborhood(e) {
                out[j] += w * scaled;
            }
        }
        Ok(out)
    }

    /// Column sums `Fᵀ 1`: the derivative of `Σ ρ̃` with respect to each design variable.
    pub fn column_sums(&self) -> Vec<f64> {
        self.chain(&vec![1.0; self.element_count()]).expect("length matches")
    }
}

/// `a_eᵀ K_e⁰ b_e` for every element, with `a` and `b` reduced (free-DOF) vectors.
pub fn element_energies(model: &FeModel, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = model.free_count();
    check_len("left vector", a.len(), n)?;
    check_len("right vector", b.len(), n)?;
    let dofmap = model.dofmap();
    let grid = model.grid();
    let af = dofmap.scatter(a);
    let bf = dofmap.scatter(b);
    let ke = model.element_matrix();
    let d = grid.dofs_per_node();
    let size = ke.size();
    let offsets: Vec<usize> = grid
        .element_nodes(0)
        .iter()
        .flat_map(|&node| (0..d).map(move |c| node * d + c))
        .collect();
    let mut ae = vec![0.0; size];
    let mut be = vec![0.0; size];
    Ok((0..grid.element_count())
        .map(|e| {
            let [i, j, k] = grid.element_coords(e);
            let base = grid.node_index(i, j, k) * d;
            for (l, &o) in offsets.iter().enumerate() {
                ae[l] = af[base + o];
                be[l] = bf[base + o];
            }
            ke.bilinear(&ae, &be)
        })
        .collect())
}

/// `∂(fᵀu)/∂ρ̃_e = −E'(ρ̃_e) u_eᵀ K_e⁰ u_e` for the equilibrium displacement `u`.
pub fn compliance_sensitivity(model: &FeModel, law: &SimpLaw, rho_physical: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_len("densities", rho_physical.len(), model.grid().element_count())?;
    let energy = element_energies(model, u, u)?;
    Ok(energy.iter().zip(rho_physical).map(|(q, &r)| -law.derivative(r) * q).collect())
}

/// `λᵀ (∂K/∂ρ̃_e) u = E'(ρ̃_e) λ_eᵀ K_e⁰ u_e`, the adjoint form used for
/// displacement objectives.
pub fn adjoint_sensitivity(
    model: &FeModel,
    law: &SimpLaw,
    rho_physical: &[f64],
    lambda: &[f64],
    u: &[f64],
) -> Result<Vec<f64>> {
    check_len("densities", rho_physical.len(), model.grid().element_count())?;
    let mutual = element_energies(model, lambda, u)?;
    Ok(mutual.iter().zip(rho_physical).map(|(q, &r)| law.derivative(r) * q).collect())
}
