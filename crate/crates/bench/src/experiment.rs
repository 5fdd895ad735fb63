use std::fmt::Write as _;

use aarmr_core::optimizer::{optimize, SolverMode};
use log::{info, warn};

use crate::error::BenchError;
use crate::report::{float, RunReport, Totals};
use crate::spec::ProblemSpec;

pub fn run(spec: &ProblemSpec) -> Result<RunReport, BenchError> {
    let problem = spec.problem()?;
    let config = spec.config();
    info!("{} {} on {:?}", spec.preset, spec.mode, spec.grid);
    let result = optimize(&problem, &config).map_err(|aborted| {
        warn!("aborted after {} iterations", aborted.records.len());
        BenchError::Solver(aborted.error)
    })?;
    Ok(RunReport {
        spec: spec.clone(),
        totals: Totals::from_records(&result.records),
        objective: result.final_objective,
        converged: result.converged,
        physical: result.physical,
        records: result.records,
    })
}

/// `(C_goal − C_ref) / C_ref × 100`. For the inverter both objectives are
/// negative, so this is the relative change of the output magnitude.
pub fn diff_pct(goal: f64, reference: f64) -> f64 {
    (goal - reference) / reference * 100.0
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub mode: SolverMode,
    pub outcome: Result<RunReport, String>,
    pub diff_pct: Option<f64>,
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
}

/// Runs `spec` once per mode; the first mode is the reference.
pub fn compare(spec: &ProblemSpec, modes: &[SolverMode]) -> Result<Comparison, BenchError> {
    if modes.len() < 2 {
        return Err(BenchError::Usage("compare needs at least two modes".into()));
    }
    let mut rows: Vec<CompareRow> = Vec::new();
    for &mode in modes {
        let outcome = run(&ProblemSpec { mode, ..spec.clone() }).map_err(|e| e.to_string());
        let (diff_pct, speedup) = match (rows.first().and_then(|r| r.outcome.as_ref().ok()), &outcome) {
            (Some(reference), Ok(goal)) => (
                Some(diff_pct(goal.objective, reference.objective)),
                Some(reference.totals.solve_seconds / goal.totals.solve_seconds),
            ),
            (None, Ok(_)) if rows.is_empty() => (Some(0.0), Some(1.0)),
            _ => (None, None),
        };
        rows.push(CompareRow { mode, outcome, diff_pct, speedup });
    }
    Ok(Comparison { rows })
}

pub const COMPARE_HEADER: [&str; 9] =
    ["mode", "objective", "diff_pct", "solve_seconds", "speedup", "mgcg_evaluations", "average_cg", "iterations", "status"];

impl Comparison {
    pub fn to_csv(&self) -> Result<Vec<u8>, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COMPARE_HEADER)?;
        let opt = |v: Option<f64>| v.map(float).unwrap_or_default();
        for row in &self.rows {
            let fields = match &row.outcome {
                Ok(r) => [
                    row.mode.to_string(),
                    float(r.objective),
                    opt(row.diff_pct),
                    float(r.totals.solve_seconds),
                    opt(row.speedup),
                    r.totals.mgcg_evaluations.to_string(),
                    float(r.totals.average_cg()),
                    r.totals.iterations.to_string(),
                    "ok".to_string(),
                ],
                Err(e) => {
                    let mut f: [String; 9] = Default::default();
                    f[0] = row.mode.to_string();
                    f[8] = format!("failed: {e}");
                    f
                }
            };
            w.write_record(&fields)?;
        }
        w.into_inner().map_err(|e| BenchError::Io(e.into_error()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8} {:>22} {:>10} {:>12} {:>8} {:>6} {:>8} {:>6}\n",
            "mode", "objective", "diff %", "solve [s]", "speedup", "mgcg", "avg cg", "iters"
        );
        for row in &self.rows {
            match &row.outcome {
                Ok(r) => {
                    let _ = writeln!(
                        out,
                        "{:<8} {:>22.14e} {:>10.5} {:>12.3} {:>8.3} {:>6} {:>8.3} {:>6}",
                        row.mode.as_str(),
                        r.objective,
                        row.diff_pct.unwrap_or(f64::NAN),
                        r.totals.solve_seconds,
                        row.speedup.unwrap_or(f64::NAN),
                        r.totals.mgcg_evaluations,
                        r.totals.average_cg(),
                        r.totals.iterations
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{:<8} FAILED: {e}", row.mode.as_str());
                }
            }
        }
        out
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.outcome.is_err())
    }
}

/// Cartesian product of `(key, values)` axes applied on top of `base`.
pub fn sweep_cells(base: &ProblemSpec, axes: &[(String, Vec<String>)]) -> Result<Vec<ProblemSpec>, BenchError> {
    let mut cells = vec![base.clone()];
    for (key, values) in axes {
        if values.is_empty() {
            return Err(BenchError::Usage(format!("sweep axis '{key}' has no values")));
        }
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in values {
                let mut c = cell.clone();
                c.set(key, v)?;
                next.push(c);
            }
        }
        cells = next;
    }
    Ok(cells)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub spec: ProblemSpec,
    pub outcome: Result<RunReport, String>,
}

/// Runs every cell; failures are recorded and the sweep continues.
pub fn sweep(base: &ProblemSpec, axes: &[(String, Vec<String>)]) -> Result<Vec<SweepRow>, BenchError> {
    let cells = sweep_cells(base, axes)?;
    Ok(cells
        .into_iter()
        .map(|spec| {
            let outcome = run(&spec).map_err(|e| e.to_string());
            SweepRow { spec, outcome }
        })
        .collect())
}

pub const SWEEP_RESULT_COLUMNS: [&str; 9] = [
    "objective",
    "iterations",
    "converged",
    "solve_seconds",
    "mgcg_evaluations",
    "cg_iterations",
    "average_cg",
    "carm_accepted",
    "status",
];

/// Long form: every spec key, then the run results, one row per cell.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(crate::spec::KEYS.iter().chain(SWEEP_RESULT_COLUMNS.iter()))?;
    for row in rows {
        let mut fields: Vec<String> = crate::spec::KEYS.iter().map(|k| row.spec.get(k).unwrap()).collect();
        match &row.outcome {
            Ok(r) => fields.extend([
                float(r.objective),
                r.totals.iterations.to_string(),
                r.converged.to_string(),
                float(r.totals.solve_seconds),
                r.totals.mgcg_evaluations.to_string(),
                r.totals.cg_iterations.to_string(),
                float(r.totals.average_cg()),
                r.totals.carm_accepted.to_string(),
                "ok".to_string(),
            ]),
            Err(e) => {
                fields.extend(std::iter::repeat(String::new()).take(SWEEP_RESULT_COLUMNS.len() - 1));
                fields.push(format!("failed: {e}"));
            }
        }
        w.write_record(&fields)?;
    }
    w.into_inner().map_err(|e| BenchError::Io(e.into_error()))
}

/// Parses `key=v1,v2,...`.
pub fn parse_axis(text: &str) -> Result<(String, Vec<String>), BenchError> {
    let (k, v) = text.split_once('=').ok_or_else(|| BenchError::Usage(format!("sweep axis must be key=v1,v2; got '{text}'")))?;
    let key = crate::spec::normalize_key(k);
    if !crate::spec::KEYS.contains(&key.as_str()) {
        return Err(BenchError::Usage(format!("unknown sweep key '{k}'")));
    }
    // grid values use commas only inside 'x' notation, so split on ';' when present
    let sep = if v.contains(';') { ';' } else { ',' };
    Ok((key, v.split(sep).map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()))
}
