use std::fmt;
use std::str::FromStr;

use aarmr_core::fe::{build_load, DofMap, FeModel, LoadCase, StructuredGrid};
use aarmr_core::optimizer::Objective;

use crate::error::BenchError;

pub const POISSON: f64 = 0.3;

/// Named benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Cantilever2d,
    Halfwheel2d,
    Ssbeam3d,
    Cantilever3d(u8),
    Inverter2d,
    Volschedule2d,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::Cantilever2d,
        Preset::Halfwheel2d,
        Preset::Ssbeam3d,
        Preset::Cantilever3d(1),
        Preset::Cantilever3d(2),
        Preset::Cantilever3d(3),
        Preset::Cantilever3d(4),
        Preset::Inverter2d,
        Preset::Volschedule2d,
    ];

    pub fn name(&self) -> String {
        match self {
            Preset::Cantilever2d => "cantilever2d".into(),
            Preset::Halfwheel2d => "halfwheel2d".into(),
            Preset::Ssbeam3d => "ssbeam3d".into(),
            Preset::Cantilever3d(c) => format!("cantilever3d-case{c}"),
            Preset::Inverter2d => "inverter2d".into(),
            Preset::Volschedule2d => "volschedule2d".into(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Preset::Ssbeam3d | Preset::Cantilever3d(_) => 3,
            _ => 2,
        }
    }

    /// Full-scale grid.
    pub fn default_grid(&self) -> Vec<usize> {
        match self {
            Preset::Cantilever2d => vec![300, 180],
            Preset::Halfwheel2d | Preset::Inverter2d => vec![320, 160],
            Preset::Volschedule2d => vec![640, 320],
            Preset::Ssbeam3d => vec![72, 24, 48],
            Preset::Cantilever3d(1) | Preset::Cantilever3d(2) => vec![48, 24, 24],
            Preset::Cantilever3d(3) => vec![64, 32, 32],
            Preset::Cantilever3d(_) => vec![96, 48, 48],
        }
    }

    pub fn default_volume(&self) -> f64 {
        match self {
            Preset::Ssbeam3d | Preset::Cantilever3d(_) => 0.2,
            Preset::Inverter2d => 0.3,
            Preset::Volschedule2d => 0.48,
            _ => 0.5,
        }
    }

    /// Force-residual acceptance threshold for reduced solutions.
    pub fn default_eps_tol(&self) -> f64 {
        match self {
            Preset::Cantilever2d => 0.1,
            Preset::Inverter2d => 1e-3,
            _ => 0.01,
        }
    }

    pub fn default_max_cg(&self) -> usize {
        if self.dim() == 3 {
            50
        } else {
            200
        }
    }

    pub fn default_iterations(&self) -> usize {
        match self {
            Preset::Volschedule2d => 100,
            _ => 200,
        }
    }

    /// Stop tolerance on max |Δρ|; the fixed-length runs use 0.
    pub fn default_tolerance(&self) -> f64 {
        match self {
            Preset::Inverter2d | Preset::Volschedule2d => 0.0,
            _ => 0.01,
        }
    }

    /// Builds the finite-element model, the reduced load and the objective.
    pub fn build(&self, dims: &[usize]) -> Result<ProblemSetup, BenchError> {
        if dims.len() != self.dim() {
            return Err(BenchError::Usage(format!(
                "{} needs a {}D grid, got {} dimensions",
                self.name(),
                self.dim(),
                dims.len()
            )));
        }
        if dims.iter().any(|&n| n < 2 || n % 2 != 0) {
            return Err(BenchError::Usage(format!("grid dimensions must be even and >= 2, got {dims:?}")));
        }
        let grid = match *dims {
            [x, y] => StructuredGrid::new_2d(x, y),
            [x, y, z] => StructuredGrid::new_3d(x, y, z),
            _ => unreachable!(),
        }
        .map_err(BenchError::Solver)?;
        let d = grid.dofs_per_node();
        let [nx, ny, nz] = grid.elements_per_axis();
        let node_dofs = |n: usize| (0..d).map(move |a| d * n + a);
        let mut springs = Vec::new();
        let mut objective = Objective::Compliance;
        let (fixed, load): (Vec<usize>, LoadCase) = match self {
            Preset::Cantilever2d => {
                let fixed = (0..=ny).flat_map(|j| node_dofs(grid.node_index(0, j, 0))).collect();
                (fixed, LoadCase::new().point(grid.node_index(nx, ny / 2, 0), 1, -1.0))
            }
            Preset::Halfwheel2d | Preset::Volschedule2d => {
                let mut fixed: Vec<usize> = node_dofs(grid.node_index(0, 0, 0)).collect();
                fixed.push(d * grid.node_index(nx, 0, 0) + 1);
                (fixed, LoadCase::new().point(grid.node_index(nx / 2, 0, 0), 1, -1.0))
            }
            Preset::Ssbeam3d => {
                let fixed = [(0, 0), (nx, 0), (0, nz), (nx, nz)]
                    .into_iter()
                    .flat_map(|(i, k)| node_dofs(grid.node_index(i, 0, k)))
                    .collect();
                (fixed, LoadCase::new().point(grid.node_index(nx / 2, 0, nz / 2), 1, -1.0))
            }
            Preset::Cantilever3d(case) => {
                let fixed = (0..=nz)
                    .flat_map(|k| (0..=ny).map(move |j| (j, k)))
                    .flat_map(|(j, k)| node_dofs(grid.node_index(0, j, k)))
                    .collect();
                let load = match case {
                    1 => LoadCase::new().point(grid.node_index(nx, ny / 2, nz / 2), 1, -1.0),
                    // two opposite axial forces: a couple about z at the free end
                    2 => LoadCase::new()
                        .point(grid.node_index(nx, ny, nz / 2), 0, 1.0)
                        .point(grid.node_index(nx, 0, nz / 2), 0, -1.0),
                    3 => {
                        let edge: Vec<usize> = (0..=nz).map(|k| grid.node_index(nx, 0, k)).collect();
                        LoadCase::new().distributed(&edge, 1, -1.0)
                    }
                    _ => {
                        let face: Vec<usize> =
                            (0..=nz).flat_map(|k| (0..=ny).map(move |j| (j, k))).map(|(j, k)| grid.node_index(nx, j, k)).collect();
                        LoadCase::new().distributed(&face, 1, -1.0)
                    }
                };
                (fixed, load)
            }
            Preset::Inverter2d => {
                let mut fixed: Vec<usize> = (0..=nx).map(|i| d * grid.node_index(i, 0, 0) + 1).collect();
                for j in [ny - 1, ny] {
                    fixed.extend(node_dofs(grid.node_index(0, j, 0)));
                }
                let input = grid.node_index(0, 0, 0);
                let output = d * grid.node_index(nx, 0, 0);
                springs.push((d * input, 1.0));
                springs.push((output, 0.1));
                objective = Objective::OutputDisplacement { dof: output };
                (fixed, LoadCase::new().point(input, 0, 1.0))
            }
        };
        let mut dofmap = DofMap::new(&grid, fixed).map_err(BenchError::Solver)?;
        for (dof, k) in springs {
            dofmap.add_spring(dof, k).map_err(BenchError::Solver)?;
        }
        let load = build_load(&grid, &dofmap, &load).map_err(BenchError::Solver)?;
        let model = FeModel::new(grid, dofmap, POISSON).map_err(BenchError::Solver)?;
        Ok(ProblemSetup { model, load, objective })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Preset {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| BenchError::Usage(format!("unknown preset '{s}'; available: {}", preset_list())))
    }
}

pub fn preset_list() -> String {
    Preset::ALL.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ")
}

/// Model, reduced load vector and objective of a preset at a given grid.
pub struct ProblemSetup {
    pub model: FeModel,
    pub load: Vec<f64>,
    pub objective: Objective,
}

impl ProblemSetup {
    /// Supports, springs and load entries as plain text, one item per line.
    pub fn describe(&self) -> String {
        let dofmap = self.model.dofmap();
        let mut out = format!("fixed {}:", dofmap.fixed().len());
        for dof in dofmap.fixed() {
            out.push_str(&format!(" {dof}"));
        }
        out.push('\n');
        for (dof, k) in dofmap.springs() {
            out.push_str(&format!("spring {dof} {k}\n"));
        }
        for (dof, v) in dofmap.scatter(&self.load).iter().enumerate().filter(|(_, v)| **v != 0.0) {
            out.push_str(&format!("load {dof} {v}\n"));
        }
        if let Objective::OutputDisplacement { dof } = self.objective {
            out.push_str(&format!("output {dof}\n"));
        }
        out
    }
}
