use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aarmr_bench::experiment::{parse_axis, sweep_csv};
use aarmr_bench::report::write_atomic;
use aarmr_bench::{compare, preset, run, sweep, BenchError, ProblemSpec};
use aarmr_core::optimizer::SolverMode;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aarmr", version, about = "Reanalysis-accelerated topology optimization benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimization and write its log, density field and summary.
    Run {
        #[command(flatten)]
        target: Target,
    },
    /// Run the same problem under several solver modes (first = reference).
    Compare {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_delimiter = ',', default_value = "mgcg,aarmr")]
        modes: Vec<SolverMode>,
    },
    /// Run the Cartesian product of parameter axes, one CSV row per cell.
    Sweep {
        #[command(flatten)]
        target: Target,
        /// Axis as key=v1,v2,... (use ';' between grid values); repeatable.
        #[arg(long = "vary", required = true)]
        axes: Vec<String>,
    },
    /// List presets and config keys.
    Presets,
}

#[derive(Args)]
struct Target {
    /// Preset name or path to a `key = value` config file.
    target: String,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    volume: Option<String>,
    #[arg(long)]
    eps_tol: Option<String>,
    #[arg(long)]
    ns: Option<String>,
    #[arg(long)]
    nm: Option<String>,
    #[arg(long)]
    non: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    cg_tol: Option<String>,
    #[arg(long)]
    max_cg: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    tolerance: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    #[arg(long)]
    warm_start: Option<String>,
    /// Any config key as key=value; repeatable, applied last.
    #[arg(long = "set")]
    set: Vec<String>,
}

impl Target {
    fn spec(&self) -> Result<ProblemSpec, BenchError> {
        let mut spec = ProblemSpec::from_target(&self.target)?;
        let flags = [
            ("grid", &self.grid),
            ("volume", &self.volume),
            ("eps_tol", &self.eps_tol),
            ("ns", &self.ns),
            ("nm", &self.nm),
            ("non", &self.non),
            ("levels", &self.levels),
            ("cg_tol", &self.cg_tol),
            ("max_cg", &self.max_cg),
            ("mode", &self.mode),
            ("iterations", &self.iterations),
            ("tolerance", &self.tolerance),
            ("radius", &self.radius),
            ("warm_start", &self.warm_start),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                spec.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| BenchError::Usage(format!("--set expects key=value, got '{kv}'")))?;
            spec.set(k, v)?;
        }
        Ok(spec)
    }
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run { target } => {
            let spec = target.spec()?;
            let report = run(&spec)?;
            for path in report.write_artifacts(&target.out)? {
                println!("wrote {}", path.display());
            }
            print!("{}", report.summary());
        }
        Command::Compare { target, modes } => {
            let spec = target.spec()?;
            let table = compare(&spec, &modes)?;
            let stem = format!("{}-compare", spec.preset);
            write_out(&target.out, &format!("{stem}.csv"), &table.to_csv()?)?;
            write_out(&target.out, &format!("{stem}.txt"), table.to_text().as_bytes())?;
            print!("{}", table.to_text());
            if table.any_failed() {
                return Err(BenchError::Solver(aarmr_core::Error::Solver("at least one mode failed".into())));
            }
        }
        Command::Sweep { target, axes } => {
            let spec = target.spec()?;
            let axes = axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>, _>>()?;
            let rows = sweep(&spec, &axes)?;
            let csv = sweep_csv(&rows)?;
            write_out(&target.out, &format!("{}-sweep.csv", spec.preset), &csv)?;
            print!("{}", String::from_utf8_lossy(&csv));
        }
        Command::Presets => {
            for p in preset::Preset::ALL {
                let s = ProblemSpec::new(p);
                println!("{:<20} grid {:<10} volume {}", p.name(), aarmr_bench::spec::grid_string(&s.grid), s.volume);
            }
            println!("keys: {}", aarmr_bench::spec::KEYS.join(", "));
        }
    }
    Ok(())
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    write_atomic(&path, bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let BenchError::Usage(_) = e {
                eprintln!("presets: {}", preset::preset_list());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
