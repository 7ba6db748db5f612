//! Report metrics: dominance, discrete convexity, minimum preservation and
//! agreement with a reference field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryRule, Grid, GridSpec, StateClass};
use crate::qlearn::Coverage;

/// Tolerance on dominance, convexity and minimum gap for solver outputs.
pub const INVARIANT_TOLERANCE: f64 = 1e-9;
/// Allowed excursion of a solver output below the exact envelope.
pub const ORACLE_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MARGIN: f64 = 0.1;

/// `max_x V(x) - f(x)`.
pub fn dominance_defect(v: &[f64], f: &[f64]) -> f64 {
    assert_eq!(v.len(), f.len(), "fields differ in length");
    v.iter().zip(f).map(|(v, f)| v - f).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest violation of the midpoint inequality `V(x) <= (V(x+e_i) + V(x-e_i)) / 2`
/// over interior states and all axes.
pub fn convexity_defect(v: &[f64], grid: &Grid) -> f64 {
    assert_eq!(v.len(), grid.len(), "field does not match grid");
    let mut worst = f64::NEG_INFINITY;
    for x in grid.states().filter(|&x| grid.class(x) == StateClass::Interior) {
        for u in grid.directions() {
            let (a, b) = grid.neighbors(x, u);
            worst = worst.max(v[x.0] - 0.5 * (v[a.0] + v[b.0]));
        }
    }
    worst
}

/// `|min V - min f|`.
pub fn min_gap(v: &[f64], f: &[f64]) -> f64 {
    let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    (min(v) - min(f)).abs()
}

/// `max |V - f|` over the corners.
pub fn corner_defect(v: &[f64], f: &[f64], grid: &Grid) -> f64 {
    grid.corners()
        .iter()
        .map(|c| (v[c.0] - f[c.0]).abs())
        .fold(0.0, f64::max)
}

/// Statistics of `V - reference` over a region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub margin: f64,
    pub states: usize,
    pub signed_min: f64,
    pub signed_max: f64,
    pub sup: f64,
    pub mean: f64,
}

/// Compare `v` to `reference` over states with every `|n_i| <= (1 - margin) M`.
pub fn interior_error(v: &[f64], reference: &[f64], grid: &Grid, margin: f64) -> Result<ErrorStats> {
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::Input(format!("margin must lie in [0, 0.5), got {margin}")));
    }
    if v.len() != grid.len() || reference.len() != grid.len() {
        return Err(Error::Input("fields do not match the grid".into()));
    }
    let limit = (1.0 - margin) * grid.half_width() as f64;
    let mut stats = ErrorStats {
        margin,
        states: 0,
        signed_min: f64::INFINITY,
        signed_max: f64::NEG_INFINITY,
        sup: 0.0,
        mean: 0.0,
    };
    let mut total = 0.0;
    for x in grid.states().filter(|&x| grid.within(x, limit)) {
        let e = v[x.0] - reference[x.0];
        stats.states += 1;
        stats.signed_min = stats.signed_min.min(e);
        stats.signed_max = stats.signed_max.max(e);
        stats.sup = stats.sup.max(e.abs());
        total += e.abs();
    }
    if stats.states == 0 {
        return Err(Error::Input(format!("no states within margin {margin}")));
    }
    stats.mean = total / stats.states as f64;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Dp,
    Qvi,
    SyncQl,
    AsyncQl,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Dp, SolverKind::Qvi, SolverKind::SyncQl, SolverKind::AsyncQl];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Dp => "dp",
            SolverKind::Qvi => "qvi",
            SolverKind::SyncQl => "sync-ql",
            SolverKind::AsyncQl => "async-ql",
        }
    }

    pub fn column(self) -> &'static str {
        match self {
            SolverKind::Dp => "V_dp",
            SolverKind::Qvi => "V_qvi",
            SolverKind::SyncQl => "V_sync_ql",
            SolverKind::AsyncQl => "V_async_ql",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, SolverKind::SyncQl | SolverKind::AsyncQl)
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Metrics of a field against `f` alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    pub dominance_defect: f64,
    pub convexity_defect: f64,
    pub min_gap: f64,
    pub corner_defect: f64,
}

impl FieldMetrics {
    pub fn compute(v: &[f64], f: &[f64], grid: &Grid) -> Self {
        Self {
            dominance_defect: dominance_defect(v, f),
            convexity_defect: convexity_defect(v, grid),
            min_gap: min_gap(v, f),
            corner_defect: corner_defect(v, f, grid),
        }
    }

    /// Descriptions of the fixed-point invariants this field breaks.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let checks = [
            ("dominance_defect", self.dominance_defect, INVARIANT_TOLERANCE),
            ("convexity_defect", self.convexity_defect, INVARIANT_TOLERANCE),
            ("min_gap", self.min_gap, INVARIANT_TOLERANCE),
            ("corner_defect", self.corner_defect, 0.0),
        ];
        for (name, value, tol) in checks {
            if !(value <= tol) {
                out.push(format!("{name} = {value:e} exceeds {tol:e}"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: SolverKind,
    /// Sweeps for the dynamic-programming solvers, steps for the learners.
    pub iterations: u64,
    pub converged: Option<bool>,
    pub residual: Option<f64>,
    pub metrics: FieldMetrics,
    pub oracle_error: Option<ErrorStats>,
    /// Against the dp field over the whole grid.
    pub dp_error: Option<ErrorStats>,
    pub coverage: Option<Coverage>,
    pub violations: Vec<String>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub function: String,
    pub grid: GridSpec,
    pub domain: Vec<(f64, f64)>,
    pub boundary: BoundaryRule,
    pub margin: f64,
    pub seed: u64,
    pub f_min: f64,
    pub f_max: f64,
    pub solvers: Vec<SolverReport>,
    pub oracle_wall_time_secs: Option<f64>,
    pub passed: bool,
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn solver(&self, kind: SolverKind) -> Option<&SolverReport> {
        self.solvers.iter().find(|s| s.solver == kind)
    }

    pub fn violations(&self) -> impl Iterator<Item = (SolverKind, &str)> {
        self.solvers
            .iter()
            .flat_map(|s| s.violations.iter().map(move |v| (s.solver, v.as_str())))
    }
}

/// Oracle-side invariants for exact solvers: never below the envelope, and equal
/// to it in one dimension.
pub fn oracle_violations(grid: &Grid, v: &[f64], oracle: &[f64]) -> Result<Vec<String>> {
    let all = interior_error(v, oracle, grid, 0.0)?;
    let mut out = Vec::new();
    if !(all.signed_min >= -ORACLE_TOLERANCE) {
        out.push(format!(
            "falls {:e} below the convex envelope (allowed {ORACLE_TOLERANCE:e})",
            -all.signed_min
        ));
    }
    if grid.dim() == 1 && !(all.sup <= ORACLE_TOLERANCE) {
        out.push(format!(
            "differs from the 1D envelope by {:e} (allowed {ORACLE_TOLERANCE:e})",
            all.sup
        ));
    }
    Ok(out)
}

/// States outside `[lo, hi]`, for learned fields.
pub fn bounds_violation(v: &[f64], lo: f64, hi: f64) -> Option<String> {
    let (min, max) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    (min < lo || max > hi || min.is_nan()).then(|| format!("values span [{min}, {max}], outside [{lo}, {hi}]"))
}
