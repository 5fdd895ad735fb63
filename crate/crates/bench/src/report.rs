use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use aarmr_core::fe::StructuredGrid;
use aarmr_core::optimizer::IterationRecord;
use aarmr_core::reanalysis::SolvePath;

use crate::error::BenchError;
use crate::spec::{grid_string, ProblemSpec};

pub const LOG_HEADER: [&str; 8] = ["loop", "objective", "volume", "change_pct", "path", "epsilon", "cg_iters", "solve_seconds"];

/// Sums over the iteration records of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Totals {
    pub iterations: usize,
    pub solve_seconds: f64,
    pub mgcg_evaluations: usize,
    pub cg_iterations: usize,
    pub carm_accepted: usize,
}

impl Totals {
    pub fn from_records(records: &[IterationRecord]) -> Self {
        let mut t = Totals { iterations: records.len(), ..Default::default() };
        for r in records {
            t.solve_seconds += r.solve_seconds;
            t.mgcg_evaluations += r.mgcg_calls;
            t.cg_iterations += r.cg_iterations.unwrap_or(0);
            t.carm_accepted += usize::from(r.path == SolvePath::CarmAccepted);
        }
        t
    }

    /// CG iterations per MGCG call; 0 when MGCG never ran.
    pub fn average_cg(&self) -> f64 {
        if self.mgcg_evaluations == 0 {
            0.0
        } else {
            self.cg_iterations as f64 / self.mgcg_evaluations as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub spec: ProblemSpec,
    pub records: Vec<IterationRecord>,
    /// Objective of the final physical design, re-solved accurately.
    pub objective: f64,
    pub converged: bool,
    pub physical: Vec<f64>,
    pub totals: Totals,
}

impl RunReport {
    pub fn stem(&self) -> String {
        format!("{}-{}", self.spec.preset, self.spec.mode)
    }

    pub fn summary(&self) -> String {
        let t = &self.totals;
        let s = &self.spec;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}: {v}\n"));
        kv("preset", s.preset.name());
        kv("grid", grid_string(&s.grid));
        kv("mode", s.mode.to_string());
        kv("volume", s.volume.to_string());
        kv("eps_tol", s.eps_tol.to_string());
        kv("ns", s.ns.to_string());
        kv("nm", s.nm.to_string());
        kv("non", s.non.to_string());
        kv("levels", s.levels.to_string());
        kv("cg_tol", s.cg_tol.to_string());
        kv("max_cg", s.max_cg.to_string());
        kv("iterations", t.iterations.to_string());
        kv("converged", self.converged.to_string());
        kv("objective", format!("{:.16e}", self.objective));
        kv("solve_seconds", format!("{:.6}", t.solve_seconds));
        kv("mgcg_evaluations", t.mgcg_evaluations.to_string());
        kv("cg_iterations", t.cg_iterations.to_string());
        kv("average_cg", format!("{:.4}", t.average_cg()));
        kv("carm_accepted", t.carm_accepted.to_string());
        out
    }

    /// Writes the iteration log, the density image and the summary into
    /// `dir`; returns the paths written.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
        fs::create_dir_all(dir)?;
        let stem = self.stem();
        let log = dir.join(format!("{stem}.csv"));
        write_atomic(&log, &log_csv(&self.records)?)?;
        let grid = match *self.spec.grid.as_slice() {
            [x, y] => StructuredGrid::new_2d(x, y)?,
            [x, y, z] => StructuredGrid::new_3d(x, y, z)?,
            _ => return Err(BenchError::Usage("grid must have 2 or 3 dimensions".into())),
        };
        let density = if grid.dim() == 2 {
            let p = dir.join(format!("{stem}.pgm"));
            write_atomic(&p, &pgm(&grid, &self.physical))?;
            p
        } else {
            let p = dir.join(format!("{stem}.vtk"));
            write_atomic(&p, vtk(&grid, &self.physical).as_bytes())?;
            p
        };
        let summary = dir.join(format!("{stem}.summary.txt"));
        write_atomic(&summary, self.summary().as_bytes())?;
        Ok(vec![log, density, summary])
    }
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn log_csv(records: &[IterationRecord]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            float(r.objective),
            float(r.volume),
            float(r.change_pct),
            r.path.to_string(),
            r.epsilon.map(float).unwrap_or_default(),
            r.cg_iterations.map(|c| c.to_string()).unwrap_or_default(),
            float(r.solve_seconds),
        ])?;
    }
    w.into_inner().map_err(|e| BenchError::Io(e.into_error()))
}

/// One parsed row of an iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub objective: f64,
    pub volume: f64,
    pub change_pct: f64,
    pub path: String,
    pub epsilon: Option<f64>,
    pub cg_iterations: Option<usize>,
    pub solve_seconds: f64,
}

pub fn read_log(text: &str) -> Result<Vec<LogRow>, BenchError> {
    let bad = |m: String| BenchError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, m));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().ne(LOG_HEADER) {
        return Err(bad(format!("unexpected header {:?}", r.headers()?)));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", LOG_HEADER[i])));
        let opt = |i: usize| (!rec[i].is_empty()).then(|| num(i)).transpose();
        rows.push(LogRow {
            iteration: rec[0].parse().map_err(|e| bad(format!("loop: {e}")))?,
            objective: num(1)?,
            volume: num(2)?,
            change_pct: num(3)?,
            path: rec[4].to_string(),
            epsilon: opt(5)?,
            cg_iterations: opt(6)?.map(|v| v as usize),
            solve_seconds: num(7)?,
        });
    }
    Ok(rows)
}

/// Binary 8-bit PGM, 255 = solid; the top image row is the top of the domain.
pub fn pgm(grid: &StructuredGrid, physical: &[f64]) -> Vec<u8> {
    let [nx, ny, _] = grid.elements_per_axis();
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for j in (0..ny).rev() {
        for i in 0..nx {
            let v = physical[grid.element_index(i, j, 0)].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

/// Legacy ASCII VTK structured points with the density as cell data.
pub fn vtk(grid: &StructuredGrid, physical: &[f64]) -> String {
    let [nx, ny, nz] = grid.elements_per_axis();
    let mut out = format!(
        "# vtk DataFile Version 3.0\ndensity\nASCII\nDATASET STRUCTURED_POINTS\nDIMENSIONS {} {} {}\nORIGIN 0 0 0\nSPACING 1 1 1\nCELL_DATA {}\nSCALARS density double 1\nLOOKUP_TABLE default\n",
        nx + 1,
        ny + 1,
        nz + 1,
        nx * ny * nz
    );
    for v in physical {
        out.push_str(&format!("{v:.9e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(iteration: usize, path: SolvePath, calls: usize, cg: Option<usize>) -> IterationRecord {
        IterationRecord {
            iteration,
            objective: 1.0 / 3.0 + iteration as f64,
            volume: 0.5,
            change_pct: 0.1,
            path,
            epsilon: (path != SolvePath::Warmup).then_some(2.0f64.sqrt() * 1e-3),
            mgcg_residual: None,
            cg_iterations: cg,
            mgcg_calls: calls,
            solve_seconds: 0.25,
            adjoint_path: None,
        }
    }

    #[test]
    fn totals_sum_record_fields() {
        let recs = [
            record(1, SolvePath::Warmup, 1, Some(10)),
            record(2, SolvePath::CarmAccepted, 0, None),
            record(3, SolvePath::CarmRejected, 1, Some(7)),
        ];
        let t = Totals::from_records(&recs);
        assert_eq!((t.iterations, t.mgcg_evaluations, t.cg_iterations, t.carm_accepted), (3, 2, 17, 1));
        assert_eq!(t.solve_seconds, 0.75);
        assert_eq!(t.average_cg(), 8.5);
        assert_eq!(Totals::default().average_cg(), 0.0);
    }

    #[test]
    fn log_round_trips() {
        let recs = [record(1, SolvePath::Warmup, 1, Some(10)), record(2, SolvePath::CarmAccepted, 0, None)];
        let text = String::from_utf8(log_csv(&recs).unwrap()).unwrap();
        assert!(text.starts_with("loop,objective,volume,change_pct,path,epsilon,cg_iters,solve_seconds\n"));
        let rows = read_log(&text).unwrap();
        for (row, rec) in rows.iter().zip(&recs) {
            assert_eq!(row.objective.to_bits(), rec.objective.to_bits());
            assert_eq!(row.epsilon.map(f64::to_bits), rec.epsilon.map(f64::to_bits));
            assert_eq!(row.cg_iterations, rec.cg_iterations);
            assert_eq!(row.path, rec.path.as_str());
        }
    }

    #[test]
    fn pgm_layout() {
        let grid = StructuredGrid::new_2d(3, 2).unwrap();
        let rho = [0.0, 0.5, 1.0, 1.0, 1.0, 0.2];
        let img = pgm(&grid, &rho);
        assert_eq!(&img[..11], b"P5\n3 2\n255\n");
        assert_eq!(&img[11..], &[255, 255, 51, 0, 128, 255]);
    }
}
