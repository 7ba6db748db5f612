//! Deterministic fixed-point solvers for the stopping problem.
//!
//! For non-corner `x`:
//!
//! ```text
//! V(x) = min( f(x), min_u Σ_y p(y|x,u) V(y) )
//! ```
//!
//! and `V = f` on the corners. The map is monotone, so Jacobi iteration started at
//! or above `f` decreases pointwise to the maximal fixed point. Both the value form
//! and the Q-table form (`z = 0` stop, `z = 1` continue) are provided; they produce
//! the same sequence of value fields.

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryRule, Direction, Grid, ScalarField, StateId};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_SWEEPS: usize = 1_000_000;
/// Continuation values within this distance of `f(x)` count as a tie and resolve to stop.
pub const TIE_EPSILON: f64 = 1e-12;

/// Stop (`z = 0`) or continue (`z = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    Stop = 0,
    Continue = 1,
}

impl Choice {
    pub const ALL: [Choice; 2] = [Choice::Stop, Choice::Continue];
}

/// One value per `(state, direction, choice)`.
///
/// Continue entries along axes that are not admissible under the table's
/// [`BoundaryRule`] are stored but ignored by [`QTable::state_min`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    dim: usize,
    values: Vec<f64>,
    controls: Vec<u64>,
}

impl QTable {
    pub fn new(grid: &Grid, rule: BoundaryRule, value: f64) -> Self {
        Self {
            dim: grid.dim(),
            values: vec![value; grid.len() * grid.dim() * 2],
            controls: grid.states().map(|s| grid.control_mask(s, rule)).collect(),
        }
    }

    /// Whether `Q(s, u, Continue)` takes part in the minimum.
    #[inline]
    pub fn admissible(&self, s: StateId, u: Direction) -> bool {
        self.controls[s.0] & (1 << u.0) != 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.values.len() / (2 * self.dim)
    }

    #[inline]
    pub fn index(&self, s: StateId, u: Direction, z: Choice) -> usize {
        (s.0 * self.dim + u.0) * 2 + z as usize
    }

    #[inline]
    pub fn get(&self, s: StateId, u: Direction, z: Choice) -> f64 {
        self.values[self.index(s, u, z)]
    }

    #[inline]
    pub fn set(&mut self, s: StateId, u: Direction, z: Choice, value: f64) {
        let i = self.index(s, u, z);
        self.values[i] = value;
    }

    /// All `2d` entries of state `s`.
    #[inline]
    pub fn row(&self, s: StateId) -> &[f64] {
        let w = 2 * self.dim;
        &self.values[s.0 * w..(s.0 + 1) * w]
    }

    pub fn row_mut(&mut self, s: StateId) -> &mut [f64] {
        let w = 2 * self.dim;
        &mut self.values[s.0 * w..(s.0 + 1) * w]
    }

    /// `min_{u,z} Q(s, u, z)` over stop entries and admissible continue entries.
    #[inline]
    pub fn state_min(&self, s: StateId) -> f64 {
        let mask = self.controls[s.0];
        let row = self.row(s);
        let mut best = f64::INFINITY;
        for (u, pair) in row.chunks_exact(2).enumerate() {
            best = best.min(pair[0]);
            if mask & (1 << u) != 0 {
                best = best.min(pair[1]);
            }
        }
        best
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Sup-norm distance between two tables of the same shape.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "table shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Pins every corner entry to `f`.
    pub fn pin_corners(&mut self, grid: &Grid, f: &ScalarField) {
        for &c in grid.corners() {
            self.row_mut(c).fill(f.get(c));
        }
    }
}

/// Starting point of the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Initialization {
    /// `max f + 1` off the corners, `f` on them.
    AboveF,
    /// A constant off the corners (`f` on them); must dominate `f`.
    Custom(f64),
    /// Anything goes. For studying non-maximal equilibria; corners are frozen at
    /// `value` unless `pin_corners` is set.
    Unchecked { value: f64, pin_corners: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Stop once the sup-norm change of a sweep, and the estimated distance to the
    /// limit, are both at most this.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub init: Initialization,
    pub boundary: BoundaryRule,
    /// Worker threads per sweep; results do not depend on it.
    pub threads: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            init: Initialization::AboveF,
            boundary: BoundaryRule::Tangential,
            threads: 1,
        }
    }
}

impl SolveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_sweeps < 1 {
            return Err(Error::Config("max_sweeps must be >= 1".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    /// Initial value field, after checking the maximal-equilibrium prescription.
    fn initial_field(&self, grid: &Grid, f: &ScalarField) -> Result<ScalarField> {
        let (level, pin) = match self.init {
            Initialization::AboveF => (f.max() + 1.0, true),
            Initialization::Custom(level) => {
                if let Some(s) = grid.non_corner_states().find(|&s| level < f.get(s)) {
                    return Err(Error::Config(format!(
                        "initial value {level} lies below f = {} at state {}; \
                         iteration would not reach the maximal fixed point",
                        f.get(s),
                        s.0
                    )));
                }
                (level, true)
            }
            Initialization::Unchecked { value, pin_corners } => (value, pin_corners),
        };
        if !level.is_finite() {
            return Err(Error::Config(format!("initial value {level} is not finite")));
        }
        Ok(ScalarField::from_fn(grid, |s| {
            if pin && grid.is_corner(s) {
                f.get(s)
            } else {
                level
            }
        }))
    }
}

#[derive(Clone, Debug)]
pub struct ValueSolution {
    pub values: ScalarField,
    pub sweeps: usize,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
    pub converged: bool,
    /// Pointwise increases observed in sweeps after the first.
    pub monotone_violations: usize,
}

#[derive(Clone, Debug)]
pub struct QSolution {
    pub q: QTable,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
    pub monotone_violations: usize,
}

fn pool(threads: usize) -> Result<Option<ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}

/// Fills `dst` in contiguous chunks; `update(first_index, chunk)` must only read shared state.
fn fill_chunks<F>(pool: Option<&ThreadPool>, dst: &mut [f64], chunk: usize, update: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    match pool {
        None => update(0, dst),
        Some(pool) => pool.install(|| {
            dst.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| update(i * chunk, c));
        }),
    }
}

/// Continuation value `min_u Σ_y p(y|x,u) V(y)` of a non-corner state.
#[inline]
pub fn continuation_value(grid: &Grid, rule: BoundaryRule, v: &[f64], x: StateId) -> f64 {
    grid.controls(x, rule)
        .map(|u| {
            let (a, b) = grid.neighbors(x, u);
            0.5 * (v[a.0] + v[b.0])
        })
        .fold(f64::INFINITY, f64::min)
}

/// One Jacobi sweep `dst = F(src)`; corners keep their current value.
fn value_sweep(
    grid: &Grid,
    rule: BoundaryRule,
    f: &[f64],
    src: &[f64],
    dst: &mut [f64],
    pool: Option<&ThreadPool>,
) {
    let chunk = chunk_len(grid.len(), pool);
    fill_chunks(pool, dst, chunk, |start, out| {
        for (k, slot) in out.iter_mut().enumerate() {
            let x = StateId(start + k);
            *slot = if grid.is_corner(x) {
                src[x.0]
            } else {
                f[x.0].min(continuation_value(grid, rule, src, x))
            };
        }
    });
}

fn chunk_len(len: usize, pool: Option<&ThreadPool>) -> usize {
    match pool {
        None => len.max(1),
        Some(p) => len.div_ceil(4 * p.current_num_threads()).max(64),
    }
}

/// Tracks sweep residuals and decides convergence.
///
/// Near the fixed point the iteration is linear with some rate `ρ < 1`, so the
/// distance to the limit is about `r ρ / (1 - ρ)`; `ρ` is estimated from the
/// residual decay over a trailing window.
struct Convergence {
    tolerance: f64,
    history: Vec<f64>,
}

impl Convergence {
    const WINDOW: usize = 32;

    fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            history: Vec::new(),
        }
    }

    fn push(&mut self, residual: f64) -> bool {
        self.history.push(residual);
        if residual == 0.0 {
            return true;
        }
        if residual > self.tolerance || self.history.len() <= Self::WINDOW {
            return false;
        }
        let old = self.history[self.history.len() - 1 - Self::WINDOW];
        let rate = (residual / old).powf(1.0 / Self::WINDOW as f64);
        rate < 1.0 && residual * rate / (1.0 - rate) <= self.tolerance
    }
}

fn sup_change(a: &[f64], b: &[f64]) -> (f64, usize) {
    a.iter().zip(b).fold((0.0, 0), |(r, up), (&old, &new)| {
        (r.max((new - old).abs()), up + usize::from(new > old))
    })
}

pub fn value_iteration(grid: &Grid, f: &ScalarField, cfg: &SolveConfig) -> Result<ValueSolution> {
    cfg.validate()?;
    f.check_len(grid)?;
    let pool = pool(cfg.threads)?;
    let mut cur = cfg.initial_field(grid, f)?.into_values();
    let mut next = cur.clone();
    let mut conv = Convergence::new(cfg.tolerance);
    let mut violations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        value_sweep(grid, cfg.boundary, f, &cur, &mut next, pool.as_ref());
        let (r, up) = sup_change(&cur, &next);
        if sweeps > 0 {
            violations += up;
        }
        sweeps += 1;
        residual = r;
        std::mem::swap(&mut cur, &mut next);
        if conv.push(r) {
            converged = true;
            break;
        }
    }
    Ok(ValueSolution {
        values: ScalarField::new(cur),
        sweeps,
        residual,
        converged,
        monotone_violations: violations,
    })
}

/// The Q-map `F'`: continue entries average the successor minima, stop entries
/// equal `f(x)`, corner entries equal `f`. Inadmissible continue entries are
/// carried over unchanged.
pub fn q_operator(grid: &Grid, f: &ScalarField, q: &QTable) -> QTable {
    let mut out = q.clone();
    q_sweep(grid, f, q, &mut out, None);
    out.pin_corners(grid, f);
    out
}

fn q_sweep(grid: &Grid, f: &[f64], src: &QTable, dst: &mut QTable, pool: Option<&ThreadPool>) {
    let width = 2 * grid.dim();
    let chunk = chunk_len(grid.len(), pool) * width;
    fill_chunks(pool, dst.values_mut(), chunk, |start, out| {
        let first = start / width;
        for (k, row) in out.chunks_mut(width).enumerate() {
            let x = StateId(first + k);
            if grid.is_corner(x) {
                row.copy_from_slice(src.row(x));
                continue;
            }
            for u in grid.directions() {
                row[2 * u.0] = f[x.0];
                row[2 * u.0 + 1] = if src.admissible(x, u) {
                    let (a, b) = grid.neighbors(x, u);
                    0.5 * (src.state_min(a) + src.state_min(b))
                } else {
                    src.get(x, u, Choice::Continue)
                };
            }
        }
    });
}

/// Q-table matching an initialization: every entry of a state gets its initial value.
pub fn initial_q(
    grid: &Grid,
    f: &ScalarField,
    init: Initialization,
    boundary: BoundaryRule,
) -> Result<QTable> {
    let cfg = SolveConfig {
        init,
        ..SolveConfig::default()
    };
    let v0 = cfg.initial_field(grid, f)?;
    let mut q = QTable::new(grid, boundary, 0.0);
    for s in grid.states() {
        q.row_mut(s).fill(v0.get(s));
    }
    Ok(q)
}

pub fn q_value_iteration(grid: &Grid, f: &ScalarField, cfg: &SolveConfig) -> Result<QSolution> {
    cfg.validate()?;
    f.check_len(grid)?;
    let pool = pool(cfg.threads)?;
    let mut cur = initial_q(grid, f, cfg.init, cfg.boundary)?;
    let mut next = cur.clone();
    let mut conv = Convergence::new(cfg.tolerance);
    let mut violations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        q_sweep(grid, f, &cur, &mut next, pool.as_ref());
        let (r, up) = sup_change(cur.values(), next.values());
        if sweeps > 0 {
            violations += up;
        }
        sweeps += 1;
        residual = r;
        std::mem::swap(&mut cur, &mut next);
        if conv.push(r) {
            converged = true;
            break;
        }
    }
    Ok(QSolution {
        q: cur,
        sweeps,
        residual,
        converged,
        monotone_violations: violations,
    })
}

/// `V(x) = min_{u,z} Q(x,u,z)`.
pub fn extract_value(q: &QTable) -> ScalarField {
    ScalarField::new((0..q.num_states()).map(|s| q.state_min(StateId(s))).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Stop,
    Continue(Direction),
}

/// Stopping rule and control per state; `None` at the absorbing corners.
///
/// Following the policy from a continue state may in principle never stop or
/// reach a corner; the solvers work on fixed points and are unaffected.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub actions: Vec<Option<Action>>,
}

impl Policy {
    pub fn get(&self, s: StateId) -> Option<Action> {
        self.actions[s.0]
    }

    pub fn stops(&self, s: StateId) -> bool {
        matches!(self.actions[s.0], Some(Action::Stop))
    }

    pub fn continues(&self, s: StateId) -> bool {
        matches!(self.actions[s.0], Some(Action::Continue(_)))
    }
}

/// Stop where the best continuation does not undercut `f` (ties stop); otherwise
/// continue along the lowest admissible axis attaining the minimum.
pub fn extract_policy(grid: &Grid, rule: BoundaryRule, f: &ScalarField, v: &ScalarField) -> Policy {
    let actions = grid
        .states()
        .map(|x| {
            if grid.is_corner(x) {
                return None;
            }
            let mut best = (f64::INFINITY, Direction(0));
            for u in grid.controls(x, rule) {
                let (a, b) = grid.neighbors(x, u);
                let value = 0.5 * (v.get(a) + v.get(b));
                if value < best.0 {
                    best = (value, u);
                }
            }
            if best.0 >= f.get(x) - TIE_EPSILON {
                Some(Action::Stop)
            } else {
                Some(Action::Continue(best.1))
            }
        })
        .collect();
    Policy { actions }
}
