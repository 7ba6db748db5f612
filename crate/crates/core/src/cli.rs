//! Command-line front end: `run`, `compare` and `list-functions`.
//!
//! Settings resolve as command-line flag, then `--config` file, then built-in
//! default. The config file is a flat JSON object keyed by flag name; every run
//! writes the resolved settings to `config.json` in the same format, so
//! `--config out/config.json` repeats it.
//!
//! Exit codes: 0 when every hard invariant holds, 1 when one is violated, 2 on a
//! configuration or I/O error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dp::{extract_value, q_value_iteration, value_iteration, SolveConfig, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::functions::{catalog, default_points, lookup, sample_on_domain, Domain};
use crate::grid::{BoundaryRule, Grid, ScalarField};
use crate::hull;
use crate::qlearn::{asynchronous_q_learning, synchronous_q_learning, LearnConfig, DEFAULT_N0};
use crate::validation::{
    bounds_violation, interior_error, oracle_violations, FieldMetrics, RunReport, SolverKind, SolverReport,
    DEFAULT_MARGIN,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const DEFAULT_ASYNC_STEPS: u64 = 2_000_000;
pub const DEFAULT_SYNC_STEPS: u64 = 100_000;
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "cvxenv", version, about = "Convex envelopes of sampled functions via optimal stopping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve with the chosen solvers and write grid.csv, report.json and config.json.
    Run(RunArgs),
    /// Like `run`, but always solves with dp and against the exact envelope
    /// (d <= 2) and defaults to the asynchronous learner.
    Compare(RunArgs),
    /// Print the function catalog.
    ListFunctions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    Dp,
    Qvi,
    SyncQl,
    AsyncQl,
    All,
}

impl SolverChoice {
    fn kinds(self) -> Vec<SolverKind> {
        match self {
            SolverChoice::Dp => vec![SolverKind::Dp],
            SolverChoice::Qvi => vec![SolverKind::Qvi],
            SolverChoice::SyncQl => vec![SolverKind::SyncQl],
            SolverChoice::AsyncQl => vec![SolverKind::AsyncQl],
            SolverChoice::All => SolverKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// Catalog function name (see `list-functions`).
    #[arg(long)]
    pub function: Option<String>,
    /// Grid dimension; defaults to the function's arity.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Points per axis, odd and at least 3.
    #[arg(long)]
    pub points: Option<usize>,
    /// Domain `lo:hi[,lo:hi]`; one interval applies to every axis.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverChoice>,
    /// Learning steps, for both learners.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Initial Q level off the corners; must exceed max f.
    #[arg(long = "L")]
    pub level: Option<f64>,
    /// Step-size scale in a(n) = 1 / (1 + n / n0).
    #[arg(long)]
    pub n0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of each half-axis excluded from the oracle comparison.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Also compute the exact convex envelope (d <= 2).
    #[arg(long)]
    pub oracle: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Controls at face states: `tangential` or `self-loop`.
    #[arg(long)]
    pub boundary: Option<BoundaryRule>,
    /// Steps before an asynchronous episode restarts.
    #[arg(long)]
    pub episode_cap: Option<usize>,
    /// Per-entry step counters for the asynchronous learner.
    #[arg(long)]
    pub local_clocks: bool,
    /// Convergence tolerance of the dp solvers.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Flat JSON file of settings keyed by flag name.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Settings as read from a config file; every key optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub function: Option<String>,
    pub dim: Option<usize>,
    pub points: Option<usize>,
    pub domain: Option<String>,
    pub solver: Option<SolverChoice>,
    pub steps: Option<u64>,
    pub sync_steps: Option<u64>,
    pub async_steps: Option<u64>,
    #[serde(rename = "L")]
    pub level: Option<f64>,
    pub n0: Option<f64>,
    pub seed: Option<u64>,
    pub margin: Option<f64>,
    pub oracle: Option<bool>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub boundary: Option<BoundaryRule>,
    pub episode_cap: Option<usize>,
    pub local_clocks: Option<bool>,
    pub tolerance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
    }
}

/// Fully resolved settings; serialized as `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub function: String,
    pub dim: usize,
    pub points: usize,
    pub domain: String,
    pub solver: SolverChoice,
    pub sync_steps: u64,
    pub async_steps: u64,
    #[serde(rename = "L")]
    pub level: Option<f64>,
    pub n0: f64,
    pub seed: u64,
    pub margin: f64,
    pub oracle: bool,
    pub out: PathBuf,
    pub threads: usize,
    pub boundary: BoundaryRule,
    pub episode_cap: Option<usize>,
    pub local_clocks: bool,
    pub tolerance: f64,
}

impl RunConfig {
    pub fn resolve(args: &RunArgs, default_solver: SolverChoice) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let function = args
            .function
            .clone()
            .or(file.function)
            .ok_or_else(|| Error::Config("no function given (use --function)".into()))?;
        let entry = lookup(&function)?;
        let dim = args.dim.or(file.dim).unwrap_or(entry.arity.default_dim());
        if !entry.arity.supports(dim) {
            return Err(Error::ArityMismatch { name: function, dim });
        }
        let domain = match args.domain.clone().or(file.domain) {
            Some(text) => Domain::parse(&text, dim)?,
            None => entry.default_domain(dim),
        };
        let steps = args.steps.or(file.steps);
        let margin = args.margin.or(file.margin).unwrap_or(DEFAULT_MARGIN);
        if !(0.0..0.5).contains(&margin) {
            return Err(Error::Config(format!("margin must lie in [0, 0.5), got {margin}")));
        }
        let cfg = Self {
            function,
            dim,
            points: args.points.or(file.points).unwrap_or_else(|| default_points(dim)),
            domain: format_domain(&domain),
            solver: args.solver.or(file.solver).unwrap_or(default_solver),
            sync_steps: steps.or(file.sync_steps).unwrap_or(DEFAULT_SYNC_STEPS),
            async_steps: steps.or(file.async_steps).unwrap_or(DEFAULT_ASYNC_STEPS),
            level: args.level.or(file.level),
            n0: args.n0.or(file.n0).unwrap_or(DEFAULT_N0),
            seed: args.seed.or(file.seed).unwrap_or(0),
            margin,
            oracle: args.oracle || file.oracle.unwrap_or(false),
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            threads: args.threads.or(file.threads).unwrap_or(1),
            boundary: args.boundary.or(file.boundary).unwrap_or_default(),
            episode_cap: args.episode_cap.or(file.episode_cap),
            local_clocks: args.local_clocks || file.local_clocks.unwrap_or(false),
            tolerance: args.tolerance.or(file.tolerance).unwrap_or(DEFAULT_TOLERANCE),
        };
        if cfg.oracle && cfg.dim > 2 {
            return Err(Error::Config(format!(
                "the exact envelope is available for d <= 2, not d = {}",
                cfg.dim
            )));
        }
        Ok(cfg)
    }

    fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            tolerance: self.tolerance,
            boundary: self.boundary,
            threads: self.threads,
            ..SolveConfig::default()
        }
    }

    fn learn_config(&self, steps: u64) -> LearnConfig {
        LearnConfig {
            init_level: self.level,
            n0: self.n0,
            total_steps: steps,
            episode_cap: self.episode_cap,
            seed: self.seed,
            local_clocks: self.local_clocks,
            boundary: self.boundary,
            threads: self.threads,
            ..LearnConfig::default()
        }
    }
}

fn format_domain(domain: &Domain) -> String {
    domain
        .axes
        .iter()
        .map(|(lo, hi)| format!("{lo:?}:{hi:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Locale-independent, 17 significant digits.
fn fmt_value(x: f64) -> String {
    format!("{x:.16e}")
}

/// The problem and every field a run produced.
pub struct RunOutput {
    pub config: RunConfig,
    pub grid: Grid,
    pub domain: Domain,
    pub f: ScalarField,
    pub fields: Vec<(SolverKind, ScalarField)>,
    pub oracle: Option<ScalarField>,
    pub report: RunReport,
}

impl RunOutput {
    pub fn field(&self, kind: SolverKind) -> Option<&ScalarField> {
        self.fields.iter().find(|(k, _)| *k == kind).map(|(_, v)| v)
    }

    pub fn csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|i| format!("x{i}")).collect();
        header.push("f".into());
        header.extend(self.fields.iter().map(|(k, _)| k.column().to_string()));
        if self.oracle.is_some() {
            header.push("V_oracle".into());
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for s in self.grid.states() {
            let mut row: Vec<String> = self.domain.point(&self.grid, s).into_iter().map(fmt_value).collect();
            row.push(fmt_value(self.f[s.0]));
            row.extend(self.fields.iter().map(|(_, v)| fmt_value(v[s.0])));
            if let Some(o) = &self.oracle {
                row.push(fmt_value(o[s.0]));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("grid.csv"), self.csv())?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)? + "\n")?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)? + "\n")?;
        Ok(())
    }
}

/// Solves the configured problem; nothing is written to disk.
pub fn execute(config: &RunConfig, solvers: &[SolverKind]) -> Result<RunOutput> {
    let started = Instant::now();
    let entry = lookup(&config.function)?;
    let domain = Domain::parse(&config.domain, config.dim)?;
    let grid = Grid::new(domain.grid_spec(config.points)?)?;
    let f = sample_on_domain(&entry, &grid, &domain)?;
    if !f.all_finite() {
        return Err(Error::Input(format!("{} is not finite on the domain", config.function)));
    }

    let (oracle, oracle_time) = if config.oracle {
        let t = Instant::now();
        let env = hull::envelope(&grid, &f)?;
        (Some(env), Some(t.elapsed().as_secs_f64()))
    } else {
        (None, None)
    };

    let mut config = config.clone();
    let mut fields: Vec<(SolverKind, ScalarField)> = Vec::new();
    let mut reports = Vec::new();
    for &kind in SolverKind::ALL.iter().filter(|k| solvers.contains(k)) {
        let t = Instant::now();
        let mut violations = Vec::new();
        let (v, iterations, converged, residual, coverage) = match kind {
            SolverKind::Dp => {
                let sol = value_iteration(&grid, &f, &config.solve_config())?;
                if sol.monotone_violations > 0 {
                    violations.push(format!("{} pointwise increases between sweeps", sol.monotone_violations));
                }
                (sol.values, sol.sweeps as u64, Some(sol.converged), Some(sol.residual), None)
            }
            SolverKind::Qvi => {
                let sol = q_value_iteration(&grid, &f, &config.solve_config())?;
                if sol.monotone_violations > 0 {
                    violations.push(format!("{} pointwise increases between sweeps", sol.monotone_violations));
                }
                (extract_value(&sol.q), sol.sweeps as u64, Some(sol.converged), Some(sol.residual), None)
            }
            SolverKind::SyncQl | SolverKind::AsyncQl => {
                let steps = if kind == SolverKind::SyncQl {
                    config.sync_steps
                } else {
                    config.async_steps
                };
                let learn = config.learn_config(steps);
                let level = learn.resolved_level(&f);
                let out = if kind == SolverKind::SyncQl {
                    synchronous_q_learning(&grid, &f, &learn)?
                } else {
                    asynchronous_q_learning(&grid, &f, &learn)?
                };
                config.level = Some(level);
                config.episode_cap = Some(learn.resolved_episode_cap(&grid));
                let v = extract_value(&out.q);
                let slack = 1e-12 * level.abs().max(f.min().abs()).max(1.0);
                if let Some(msg) = bounds_violation(&v, f.min() - slack, level + slack) {
                    violations.push(msg);
                }
                (v, out.steps, None, None, Some(out.coverage))
            }
        };
        let metrics = FieldMetrics::compute(&v, &f, &grid);
        let mut oracle_error = None;
        if let Some(env) = &oracle {
            oracle_error = Some(interior_error(&v, env, &grid, config.margin)?);
            if !kind.is_learning() {
                violations.extend(oracle_violations(&grid, &v, env)?);
            }
        }
        if !kind.is_learning() {
            if converged == Some(false) {
                violations.push(format!("not converged after {iterations} sweeps"));
            }
            violations.extend(metrics.violations());
        }
        let dp_error = match fields.iter().find(|(k, _)| *k == SolverKind::Dp) {
            Some((_, dp)) if kind != SolverKind::Dp => Some(interior_error(&v, dp, &grid, 0.0)?),
            _ => None,
        };
        reports.push(SolverReport {
            solver: kind,
            iterations,
            converged,
            residual,
            metrics,
            oracle_error,
            dp_error,
            coverage,
            violations,
            wall_time_secs: t.elapsed().as_secs_f64(),
        });
        fields.push((kind, v));
    }

    let passed = reports.iter().all(|r| r.violations.is_empty());
    let report = RunReport {
        function: config.function.clone(),
        grid: *grid.spec(),
        domain: domain.axes.clone(),
        boundary: config.boundary,
        margin: config.margin,
        seed: config.seed,
        f_min: f.min(),
        f_max: f.max(),
        solvers: reports,
        oracle_wall_time_secs: oracle_time,
        passed,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        config,
        grid,
        domain,
        f,
        fields,
        oracle,
        report,
    })
}

fn summary(report: &RunReport) -> String {
    let mut s = String::new();
    let dims: Vec<String> = vec![report.grid.side().to_string(); report.grid.dim];
    let _ = writeln!(s, "{} on {} grid", report.function, dims.join("x"));
    for r in &report.solvers {
        let _ = write!(
            s,
            "  {:<9} iterations {:>9}  dominance {:>10.3e}  convexity {:>10.3e}  min_gap {:>10.3e}",
            r.solver.name(),
            r.iterations,
            r.metrics.dominance_defect,
            r.metrics.convexity_defect,
            r.metrics.min_gap
        );
        if let Some(e) = &r.oracle_error {
            let _ = write!(s, "  oracle [{:.3e}, {:.3e}]", e.signed_min, e.signed_max);
        }
        if let Some(e) = &r.dp_error {
            let _ = write!(s, "  vs dp sup {:.3e}", e.sup);
        }
        s.push('\n');
        for v in &r.violations {
            let _ = writeln!(s, "    violation: {v}");
        }
    }
    let _ = writeln!(s, "{}", if report.passed { "all invariants hold" } else { "INVARIANT VIOLATED" });
    s
}

pub fn list_functions() -> String {
    let mut s = format!("{:<11} {:<6} {:<28} {}\n", "name", "arity", "default domain", "notes");
    for f in catalog() {
        let dim = f.arity.default_dim();
        let h = f.half_width;
        let domain = vec![format!("[{}, {}]", -h, h); dim].join("x");
        let _ = writeln!(s, "{:<11} {:<6} {:<28} {}", f.name, f.arity.to_string(), domain, f.notes);
    }
    s
}

fn run_command(args: &RunArgs, compare: bool, stdout: &mut dyn Write) -> Result<bool> {
    let default_solver = if compare { SolverChoice::AsyncQl } else { SolverChoice::Dp };
    let mut config = RunConfig::resolve(args, default_solver)?;
    let mut solvers = config.solver.kinds();
    if compare {
        if !solvers.contains(&SolverKind::Dp) {
            solvers.push(SolverKind::Dp);
        }
        config.oracle = config.dim <= 2;
    }
    let output = execute(&config, &solvers)?;
    output.write(&output.config.out)?;
    stdout.write_all(summary(&output.report).as_bytes())?;
    Ok(output.report.passed)
}

/// Runs a parsed command and returns the process exit code.
pub fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::ListFunctions => stdout.write_all(list_functions().as_bytes()).map(|_| true).map_err(Error::from),
        Command::Run(args) => run_command(args, false, stdout),
        Command::Compare(args) => run_command(args, true, stdout),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_INVARIANT,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_CONFIG
        }
    }
}
