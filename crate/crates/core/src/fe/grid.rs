//! Regular element lattices, degree-of-freedom bookkeeping and load vectors.
//!
//! Nodes are numbered lexicographically with x fastest, then y, then z. The
//! global DOF of component `c` at node `n` is `n * dofs_per_node + c`. Elements
//! have unit edge length and element `(i, j, k)` spans nodes `(i..=i+1, j..=j+1,
//! k..=k+1)`.

use crate::error::{Error, Result};

/// Local node offsets of a quadrilateral, counter-clockwise from the lower-left corner.
pub(crate) const QUAD_NODES: [[usize; 3]; 4] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]];

/// Local node offsets of a hexahedron: bottom face (z = 0) then top face, each counter-clockwise.
pub(crate) const HEX_NODES: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// A 2D or 3D grid of unit square/cube elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StructuredGrid {
    dim: usize,
    nel: [usize; 3],
}

impl StructuredGrid {
    pub fn new_2d(nelx: usize, nely: usize) -> Result<Self> {
        if nelx == 0 || nely == 0 {
            return Err(Error::Configuration(format!(
                "element counts must be positive, got {nelx}x{nely}"
            )));
        }
        Ok(Self { dim: 2, nel: [nelx, nely, 1] })
    }

    pub fn new_3d(nelx: usize, nely: usize, nelz: usize) -> Result<Self> {
        if nelx == 0 || nely == 0 || nelz == 0 {
            return Err(Error::Configuration(format!(
                "element counts must be positive, got {nelx}x{nely}x{nelz}"
            )));
        }
        Ok(Self { dim: 3, nel: [nelx, nely, nelz] })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nelx(&self) -> usize {
        self.nel[0]
    }

    pub fn nely(&self) -> usize {
        self.nel[1]
    }

    /// `None` for 2D grids.
    pub fn nelz(&self) -> Option<usize> {
        (self.dim == 3).then_some(self.nel[2])
    }

    /// Element counts per axis; the z entry is 1 for 2D grids.
    pub fn elements_per_axis(&self) -> [usize; 3] {
        self.nel
    }

    /// Node counts per axis; the z entry is 1 for 2D grids.
    pub fn nodes_per_axis(&self) -> [usize; 3] {
        if self.dim == 2 {
            [self.nel[0] + 1, self.nel[1] + 1, 1]
        } else {
            [self.nel[0] + 1, self.nel[1] + 1, self.nel[2] + 1]
        }
    }

    pub fn element_count(&self) -> usize {
        self.nel.iter().product()
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().iter().product()
    }

    pub fn dofs_per_node(&self) -> usize {
        self.dim
    }

    pub fn dof_count(&self) -> usize {
        self.node_count() * self.dim
    }

    pub fn nodes_per_element(&self) -> usize {
        1 << self.dim
    }

    pub fn dofs_per_element(&self) -> usize {
        self.nodes_per_element() * self.dim
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.nodes_per_axis();
        i + nx * (j + ny * k)
    }

    pub fn node_coords(&self, node: usize) -> [usize; 3] {
        let [nx, ny, _] = self.nodes_per_axis();
        [node % nx, (node / nx) % ny, node / (nx * ny)]
    }

    pub fn element_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nel[0] * (j + self.nel[1] * k)
    }

    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        [e % self.nel[0], (e / self.nel[0]) % self.nel[1], e / (self.nel[0] * self.nel[1])]
    }

    /// Element center in element-length units.
    pub fn element_center(&self, e: usize) -> [f64; 3] {
        let [i, j, k] = self.element_coords(e);
        let z = if self.dim == 3 { k as f64 + 0.5 } else { 0.0 };
        [i as f64 + 0.5, j as f64 + 0.5, z]
    }

    pub(crate) fn local_offsets(&self) -> &'static [[usize; 3]] {
        if self.dim == 2 {
            &QUAD_NODES
        } else {
            &HEX_NODES
        }
    }

    /// Global node index offsets of an element's local nodes relative to its first node.
    pub(crate) fn node_offsets(&self) -> Vec<usize> {
        let [nx, ny, _] = self.nodes_per_axis();
        self.local_offsets()
            .iter()
            .map(|o| o[0] + nx * (o[1] + ny * o[2]))
            .collect()
    }

    /// Global node indices of element `e` in local order.
    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let [i, j, k] = self.element_coords(e);
        let base = self.node_index(i, j, k);
        self.node_offsets().into_iter().map(|o| base + o).collect()
    }

    /// Global DOF indices of element `e` in local order (node-major).
    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        let d = self.dim;
        self.element_nodes(e)
            .into_iter()
            .flat_map(|n| (0..d).map(move |c| n * d + c))
            .collect()
    }

    /// The grid with half as many elements per axis, or an error naming the
    /// first axis whose count is odd.
    pub fn coarsen(&self) -> Result<Self> {
        for (axis, name) in ["x", "y", "z"].iter().enumerate().take(self.dim) {
            if self.nel[axis] % 2 != 0 {
                return Err(Error::Configuration(format!(
                    "cannot coarsen: {} elements along {name} is not even",
                    self.nel[axis]
                )));
            }
        }
        let mut nel = self.nel;
        for n in nel.iter_mut().take(self.dim) {
            *n /= 2;
        }
        Ok(Self { dim: self.dim, nel })
    }
}

/// Partition of the grid DOFs into fixed and free sets plus diagonal springs.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    dofs_per_node: usize,
    total: usize,
    fixed: Vec<usize>,
    free: Vec<usize>,
    free_index: Vec<u32>,
    springs: Vec<(usize, f64)>,
}

pub(crate) const NOT_FREE: u32 = u32::MAX;

impl DofMap {
    /// Builds the map from a list of fixed global DOFs (duplicates allowed).
    pub fn new(grid: &StructuredGrid, fixed: impl IntoIterator<Item = usize>) -> Result<Self> {
        let total = grid.dof_count();
        let mut is_fixed = vec![false; total];
        for d in fixed {
            if d >= total {
                return Err(Error::Configuration(format!(
                    "fixed DOF {d} out of range (grid has {total} DOFs)"
                )));
            }
            is_fixed[d] = true;
        }
        Self::from_mask(grid.dofs_per_node(), &is_fixed)
    }

    pub(crate) fn from_mask(dofs_per_node: usize, is_fixed: &[bool]) -> Result<Self> {
        let total = is_fixed.len();
        if total > NOT_FREE as usize {
            return Err(Error::Configuration(format!("{total} DOFs exceed index range")));
        }
        let mut fixed = Vec::new();
        let mut free = Vec::new();
        let mut free_index = vec![NOT_FREE; total];
        for (d, &f) in is_fixed.iter().enumerate() {
            if f {
                fixed.push(d);
            } else {
                free_index[d] = free.len() as u32;
                free.push(d);
            }
        }
        if free.is_empty() {
            return Err(Error::Configuration("every DOF is fixed".into()));
        }
        Ok(Self { dofs_per_node, total, fixed, free, free_index, springs: Vec::new() })
    }

    /// Adds a grounded spring of stiffness `k` on global DOF `dof`.
    pub fn add_spring(&mut self, dof: usize, k: f64) -> Result<()> {
        if dof >= self.total {
            return Err(Error::Configuration(format!("spring DOF {dof} out of range")));
        }
        if self.free_index[dof] == NOT_FREE {
            return Err(Error::Configuration(format!("spring on fixed DOF {dof}")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Parameter(format!("spring stiffness must be positive, got {k}")));
        }
        self.springs.push((dof, k));
        Ok(())
    }

    pub fn dofs_per_node(&self) -> usize {
        self.dofs_per_node
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    /// Free global DOFs in increasing order; position = reduced index.
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn springs(&self) -> &[(usize, f64)] {
        &self.springs
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.free_index[dof] == NOT_FREE
    }

    /// Reduced index of a global DOF, `None` when it is fixed.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        match self.free_index[dof] {
            NOT_FREE => None,
            i => Some(i as usize),
        }
    }

    /// Expands a reduced vector to all DOFs, with zeros at fixed DOFs.
    pub fn scatter(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.total];
        for (&d, &v) in self.free.iter().zip(reduced) {
            full[d] = v;
        }
        full
    }

    /// Restricts a full vector to the free DOFs.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| full[d]).collect()
    }
}

/// A nodal point load. `axis` is 0 = x, 1 = y, 2 = z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoad {
    pub node: usize,
    pub axis: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadCase {
    pub entries: Vec<PointLoad>,
}

impl LoadCase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn point(mut self, node: usize, axis: usize, magnitude: f64) -> Self {
        self.entries.push(PointLoad { node, axis, magnitude });
        self
    }

    /// Spreads `total` evenly over `nodes` along `axis`.
    pub fn distributed(mut self, nodes: &[usize], axis: usize, total: f64) -> Self {
        let share = total / nodes.len().max(1) as f64;
        self.entries
            .extend(nodes.iter().map(|&node| PointLoad { node, axis, magnitude: share }));
        self
    }

    pub fn total(&self, axis: usize) -> f64 {
        self.entries.iter().filter(|p| p.axis == axis).map(|p| p.magnitude).sum()
    }
}

/// Assembles the load vector over the free DOFs.
pub fn build_load(grid: &StructuredGrid, dofmap: &DofMap, load: &LoadCase) -> Result<Vec<f64>> {
    if load.entries.is_empty() {
        return Err(Error::Configuration("load case has no entries".into()));
    }
    let mut f = vec![0.0; dofmap.free_count()];
    for p in &load.entries {
        if p.node >= grid.node_count() || p.axis >= grid.dofs_per_node() {
            return Err(Error::Configuration(format!(
                "load at node {} axis {} is outside the grid",
                p.node, p.axis
            )));
        }
        let dof = p.node * grid.dofs_per_node() + p.axis;
        match dofmap.free_index(dof) {
            Some(i) => f[i] += p.magnitude,
            None => {
                return Err(Error::Configuration(format!("load applied to fixed DOF {dof}")))
            }
        }
    }
    if f.iter().all(|&v| v == 0.0) {
        return Err(Error::Configuration("assembled load vector is zero".into()));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_numbering() {
        let g = StructuredGrid::new_2d(4, 2).unwrap();
        assert_eq!(g.node_count(), 15);
        assert_eq!(g.element_nodes(0), vec![0, 1, 6, 5]);
        assert_eq!(g.element_nodes(g.element_index(3, 1, 0)), vec![8, 9, 14, 13]);
        let g3 = StructuredGrid::new_3d(2, 3, 4).unwrap();
        assert_eq!(g3.node_count(), 3 * 4 * 5);
        assert_eq!(g3.element_dofs(0).len(), 24);
        assert_eq!(g3.element_nodes(0), vec![0, 1, 4, 3, 12, 13, 16, 15]);
        assert!(StructuredGrid::new_2d(0, 3).is_err());
    }

    #[test]
    fn element_node_lattice_is_covered() {
        let g = StructuredGrid::new_3d(3, 2, 2).unwrap();
        let mut seen = vec![0usize; g.node_count()];
        for e in 0..g.element_count() {
            let nodes = g.element_nodes(e);
            assert_eq!(nodes.len(), 8);
            for n in nodes {
                seen[n] += 1;
            }
        }
        // corner nodes belong to one element, interior nodes to eight
        assert_eq!(seen[0], 1);
        assert_eq!(seen[g.node_index(1, 1, 1)], 8);
        assert!(seen.iter().all(|&c| c >= 1));
    }

    #[test]
    fn coarsen_names_axis() {
        let g = StructuredGrid::new_2d(8, 6).unwrap();
        assert_eq!(g.coarsen().unwrap().elements_per_axis(), [4, 3, 1]);
        let err = g.coarsen().unwrap().coarsen().unwrap_err();
        assert!(err.to_string().contains("along y"), "{err}");
    }

    #[test]
    fn dofmap_partition() {
        let g = StructuredGrid::new_2d(2, 1).unwrap();
        let m = DofMap::new(&g, [0, 1, 6, 6]).unwrap();
        assert_eq!(m.fixed(), &[0, 1, 6]);
        assert_eq!(m.free_count() + m.fixed().len(), g.dof_count());
        assert_eq!(m.free_index(2), Some(0));
        assert_eq!(m.free_index(6), None);
        let x: Vec<f64> = (0..m.free_count()).map(|i| i as f64 + 1.0).collect();
        assert_eq!(m.gather(&m.scatter(&x)), x);
    }

    #[test]
    fn springs_validated() {
        let g = StructuredGrid::new_2d(1, 1).unwrap();
        let mut m = DofMap::new(&g, [0]).unwrap();
        assert!(m.add_spring(0, 1.0).is_err());
        assert!(m.add_spring(2, 0.0).is_err());
        m.add_spring(2, 0.1).unwrap();
        assert_eq!(m.springs(), &[(2, 0.1)]);
    }

    #[test]
    fn load_vector() {
        let g = StructuredGrid::new_2d(2, 2).unwrap();
        let m = DofMap::new(&g, [0, 1]).unwrap();
        let f = build_load(&g, &m, &LoadCase::new().point(8, 1, 1.0)).unwrap();
        assert_eq!(f.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(f.iter().sum::<f64>(), 1.0);
        assert!(matches!(
            build_load(&g, &m, &LoadCase::new()),
            Err(Error::Configuration(_))
        ));
        assert!(build_load(&g, &m, &LoadCase::new().point(0, 0, 1.0)).is_err());
    }

    #[test]
    fn distributed_load_conserves_total() {
        let g = StructuredGrid::new_3d(4, 2, 6).unwrap();
        let m = DofMap::new(&g, []).unwrap();
        let line: Vec<usize> = (0..=6).map(|k| g.node_index(4, 0, k)).collect();
        let load = LoadCase::new().distributed(&line, 1, -3.0);
        let f = build_load(&g, &m, &load).unwrap();
        assert!((f.iter().sum::<f64>() + 3.0).abs() < 1e-14);
        assert_eq!(load.entries.len(), 7);
    }
}
