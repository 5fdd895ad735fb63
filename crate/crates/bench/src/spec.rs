use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use aarmr_core::material::SimpLaw;
use aarmr_core::optimizer::{OptConfig, OptProblem, SolverMode};
use aarmr_core::reanalysis::ReanalysisConfig;

use crate::error::BenchError;
use crate::preset::Preset;

/// Keys accepted in config files and by `--set`.
pub const KEYS: [&str; 15] = [
    "preset", "grid", "volume", "eps_tol", "ns", "nm", "non", "levels", "cg_tol", "max_cg", "mode", "iterations",
    "tolerance", "radius", "warm_start",
];

/// A preset plus every tunable run parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub preset: Preset,
    pub grid: Vec<usize>,
    pub volume: f64,
    pub eps_tol: f64,
    pub ns: usize,
    pub nm: usize,
    pub non: usize,
    pub levels: usize,
    pub cg_tol: f64,
    pub max_cg: usize,
    pub mode: SolverMode,
    pub iterations: usize,
    pub tolerance: f64,
    pub radius: f64,
    /// Plain MGCG starts from the previous solution instead of zero.
    pub warm_start: bool,
}

impl ProblemSpec {
    pub fn new(preset: Preset) -> Self {
        let reanalysis = ReanalysisConfig::default();
        Self {
            preset,
            grid: preset.default_grid(),
            volume: preset.default_volume(),
            eps_tol: preset.default_eps_tol(),
            ns: reanalysis.parm_size,
            nm: reanalysis.carm_size,
            non: reanalysis.activation,
            levels: 3,
            cg_tol: 1e-6,
            max_cg: preset.default_max_cg(),
            mode: SolverMode::Aarmr,
            iterations: preset.default_iterations(),
            tolerance: preset.default_tolerance(),
            radius: 2.5,
            warm_start: false,
        }
    }

    /// Parses a flat `key = value` file; `#` starts a comment. The preset
    /// key is mandatory and applied first, so it may appear anywhere.
    pub fn parse_config(text: &str) -> Result<Self, BenchError> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| BenchError::Usage(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let preset = pairs
            .iter()
            .find(|(k, _)| normalize_key(k) == "preset")
            .ok_or_else(|| BenchError::Usage("config file has no 'preset' key".into()))?
            .1
            .parse()?;
        let mut spec = Self::new(preset);
        for (k, v) in pairs.iter().filter(|(k, _)| normalize_key(k) != "preset") {
            spec.set(k, v)?;
        }
        Ok(spec)
    }

    /// Accepts a preset name or a path to a config file.
    pub fn from_target(target: &str) -> Result<Self, BenchError> {
        if let Ok(p) = target.parse::<Preset>() {
            return Ok(Self::new(p));
        }
        let path = Path::new(target);
        if !path.exists() {
            return Err(BenchError::Usage(format!(
                "'{target}' is neither a preset ({}) nor a config file",
                crate::preset::preset_list()
            )));
        }
        Self::parse_config(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), BenchError> {
        let value = value.trim();
        match normalize_key(key).as_str() {
            "preset" => {
                let preset: Preset = value.parse()?;
                if preset != self.preset {
                    *self = Self::new(preset);
                }
            }
            "grid" => self.grid = parse_grid(value)?,
            "volume" => self.volume = parse(key, value)?,
            "eps_tol" => self.eps_tol = parse(key, value)?,
            "ns" => self.ns = parse(key, value)?,
            "nm" => self.nm = parse(key, value)?,
            "non" => self.non = parse(key, value)?,
            "levels" => self.levels = parse(key, value)?,
            "cg_tol" => self.cg_tol = parse(key, value)?,
            "max_cg" => self.max_cg = parse(key, value)?,
            "mode" => self.mode = value.parse().map_err(|e| BenchError::Usage(format!("{e}")))?,
            "iterations" => self.iterations = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "warm_start" => self.warm_start = parse(key, value)?,
            _ => return Err(BenchError::Usage(format!("unknown key '{key}'; known keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match normalize_key(key).as_str() {
            "preset" => self.preset.name(),
            "grid" => grid_string(&self.grid),
            "volume" => self.volume.to_string(),
            "eps_tol" => self.eps_tol.to_string(),
            "ns" => self.ns.to_string(),
            "nm" => self.nm.to_string(),
            "non" => self.non.to_string(),
            "levels" => self.levels.to_string(),
            "cg_tol" => self.cg_tol.to_string(),
            "max_cg" => self.max_cg.to_string(),
            "mode" => self.mode.to_string(),
            "iterations" => self.iterations.to_string(),
            "tolerance" => self.tolerance.to_string(),
            "radius" => self.radius.to_string(),
            "warm_start" => self.warm_start.to_string(),
            _ => return None,
        })
    }

    /// The spec as a config file that parses back to the same spec.
    pub fn to_config(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).unwrap())).collect()
    }

    pub fn problem(&self) -> Result<OptProblem, BenchError> {
        let setup = self.preset.build(&self.grid)?;
        OptProblem::new(setup.model, setup.load, setup.objective, self.volume, SimpLaw::default(), self.radius)
            .map_err(|e| BenchError::Usage(e.to_string()))
    }

    pub fn config(&self) -> OptConfig {
        let mut cfg = OptConfig::new(self.mode, self.preset.dim());
        cfg.max_iterations = self.iterations;
        cfg.tolerance = self.tolerance;
        cfg.reanalysis = ReanalysisConfig { parm_size: self.ns, carm_size: self.nm, tolerance: self.eps_tol, activation: self.non };
        cfg.multigrid.levels = self.levels;
        cfg.multigrid.tolerance = self.cg_tol;
        cfg.multigrid.max_iterations = self.max_cg;
        cfg.mgcg_warm_start = self.warm_start;
        if self.preset == Preset::Volschedule2d {
            cfg.volume_schedule = Some(ramp_schedule(self.volume));
        }
        cfg
    }
}

/// Holds `start` through iteration 50, then drops 0.005 per iteration and
/// settles 0.03 lower at iteration 56.
pub fn ramp_schedule(start: f64) -> Arc<dyn Fn(usize) -> f64 + Send + Sync> {
    Arc::new(move |it| {
        let steps = it.saturating_sub(50).min(6);
        start - 0.005 * steps as f64
    })
}

pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, BenchError>
where
    T::Err: Display,
{
    value.parse().map_err(|e| BenchError::Usage(format!("bad value '{value}' for {key}: {e}")))
}

pub fn parse_grid(value: &str) -> Result<Vec<usize>, BenchError> {
    let dims: Result<Vec<usize>, _> = value.split(['x', 'X', '×', ',']).map(|s| s.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if d.len() == 2 || d.len() == 3 => Ok(d),
        _ => Err(BenchError::Usage(format!("grid must look like 150x90 or 48x16x32, got '{value}'"))),
    }
}

pub fn grid_string(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}
