//! Benchmark functions and grid sampling.
//!
//! The two-dimensional entries are the usual non-convex optimization test problems;
//! `affine`, `quadratic` and `doublewell` are separable sanity checks usable in any
//! dimension.

use std::f64::consts::{E, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec, StateId};

pub use crate::grid::ScalarField;

pub const ACKLEY_A: f64 = 20.0;
pub const ACKLEY_B: f64 = 0.2;
pub const ACKLEY_C: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arity {
    Fixed(usize),
    /// Separable; evaluates in any dimension (listed with its default).
    Any { default: usize },
}

impl Arity {
    pub fn default_dim(self) -> usize {
        match self {
            Arity::Fixed(d) | Arity::Any { default: d } => d,
        }
    }

    pub fn supports(self, dim: usize) -> bool {
        match self {
            Arity::Fixed(d) => d == dim,
            Arity::Any { .. } => dim >= 1,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Fixed(d) => write!(f, "{d}"),
            Arity::Any { default } => write!(f, "{default}+"),
        }
    }
}

#[derive(Clone, Copy)]
pub struct TestFunction {
    pub name: &'static str,
    pub arity: Arity,
    /// Default domain is `[-h, h]` on every axis.
    pub half_width: f64,
    pub notes: &'static str,
    eval: fn(&[f64]) -> f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("half_width", &self.half_width)
            .finish()
    }
}

impl TestFunction {
    pub fn eval(&self, point: &[f64]) -> f64 {
        (self.eval)(point)
    }

    pub fn is_benchmark(&self) -> bool {
        !matches!(self.name, "affine" | "quadratic" | "doublewell")
    }

    pub fn default_domain(&self, dim: usize) -> Domain {
        Domain::symmetric(self.half_width, dim)
    }
}

fn radius(p: &[f64]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

fn exp_fn(p: &[f64]) -> f64 {
    p[0].exp()
}

fn dropwave(p: &[f64]) -> f64 {
    let r2 = p[0] * p[0] + p[1] * p[1];
    -(1.0 + (12.0 * r2.sqrt()).cos()) / (0.5 * r2 + 2.0)
}

fn sinc(p: &[f64]) -> f64 {
    let r = radius(p);
    if r == 0.0 {
        1.0
    } else {
        r.sin() / r
    }
}

fn ackley(p: &[f64]) -> f64 {
    let (x, y) = (p[0], p[1]);
    -ACKLEY_A * (-ACKLEY_B * (0.5 * (x * x + y * y)).sqrt()).exp()
        - (0.5 * ((ACKLEY_C * x).cos() + (ACKLEY_C * y).cos())).exp()
        + ACKLEY_A
        + E
}

fn levy(p: &[f64]) -> f64 {
    let w1 = 1.0 + (p[0] - 1.0) / 4.0;
    let w2 = 1.0 + (p[1] - 1.0) / 4.0;
    (PI * w1).sin().powi(2)
        + (w1 - 1.0).powi(2) * (1.0 + 10.0 * (PI * w1 + 1.0).sin().powi(2))
        + (w2 - 1.0).powi(2) * (1.0 + (2.0 * PI * w2).sin().powi(2))
}

fn easom_shifted(p: &[f64]) -> f64 {
    let (x, y) = (p[0], p[1]);
    -(x + PI).cos() * (y + PI).cos() * (-x * x - y * y).exp()
}

fn rastrigin(p: &[f64]) -> f64 {
    let (x, y) = (p[0], p[1]);
    20.0 + x * x + y * y - 10.0 * (2.0 * PI * x).cos() - 10.0 * (2.0 * PI * y).cos()
}

fn schubert_factor(t: f64) -> f64 {
    (1..=5)
        .map(|i| {
            let i = i as f64;
            i * ((i + 1.0) * t + i).cos()
        })
        .sum()
}

fn schubert(p: &[f64]) -> f64 {
    schubert_factor(p[0]) * schubert_factor(p[1])
}

fn holder_table(p: &[f64]) -> f64 {
    let (x, y) = (p[0], p[1]);
    -(x.sin() * y.cos() * (1.0 - radius(p) / PI).abs().exp()).abs()
}

fn affine(p: &[f64]) -> f64 {
    p.iter().sum()
}

fn quadratic(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum()
}

fn double_well(p: &[f64]) -> f64 {
    p.iter()
        .map(|&x| ((x + 1.0) * (x + 1.0)).min((x - 1.0) * (x - 1.0)))
        .sum()
}

pub fn catalog() -> Vec<TestFunction> {
    let entry = |name, arity, half_width, notes, eval| TestFunction {
        name,
        arity,
        half_width,
        notes,
        eval,
    };
    let two = Arity::Fixed(2);
    let any = Arity::Any { default: 1 };
    vec![
        entry("exp", Arity::Fixed(1), 2.0, "exp(x)", exp_fn as fn(&[f64]) -> f64),
        entry("dropwave", two, 5.12, "-(1+cos(12r))/(r^2/2+2)", dropwave),
        entry("sinc", two, 10.0, "sin(r)/r, 1 at the origin", sinc),
        entry("ackley", two, 5.12, "a=20, b=0.2, c=2pi", ackley),
        entry("levy", two, 10.0, "w_i = 1+(x_i-1)/4", levy),
        entry("easom", two, 5.0, "-cos(x+pi)cos(y+pi)exp(-x^2-y^2)", easom_shifted),
        entry("rastrigin", two, 5.12, "20+x^2+y^2-10cos(2pi x)-10cos(2pi y)", rastrigin),
        entry("schubert", two, 10.0, "prod_axis sum_{i=1..5} i cos((i+1)t+i)", schubert),
        entry("holder", two, 10.0, "-|sin x cos y exp(|1-r/pi|)|", holder_table),
        entry("affine", any, 2.0, "sum x_i", affine),
        entry("quadratic", any, 2.0, "sum x_i^2", quadratic),
        entry("doublewell", any, 2.0, "sum min((x_i+1)^2,(x_i-1)^2)", double_well),
    ]
}

pub fn lookup(name: &str) -> Result<TestFunction> {
    let all = catalog();
    all.iter()
        .find(|f| f.name == name)
        .copied()
        .ok_or_else(|| Error::UnknownFunction {
            name: name.to_string(),
            available: all.iter().map(|f| f.name).collect::<Vec<_>>().join(", "),
        })
}

/// Axis-aligned box `[lo_1, hi_1] × ... × [lo_d, hi_d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub axes: Vec<(f64, f64)>,
}

impl Domain {
    pub fn symmetric(half_width: f64, dim: usize) -> Self {
        Self {
            axes: vec![(-half_width, half_width); dim],
        }
    }

    /// Parses `lo:hi[,lo:hi...]`. A single interval is broadcast to `dim` axes.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let mut axes = Vec::new();
        for part in text.split(',') {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("domain axis `{part}` is not lo:hi")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad domain bound `{s}`")))
            };
            axes.push((parse(lo)?, parse(hi)?));
        }
        if axes.len() == 1 && dim > 1 {
            axes = vec![axes[0]; dim];
        }
        let domain = Self { axes };
        domain.validate(dim)?;
        Ok(domain)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.axes.len() != dim {
            return Err(Error::Config(format!(
                "domain has {} axes but the grid has dimension {dim}",
                self.axes.len()
            )));
        }
        for &(lo, hi) in &self.axes {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("empty or non-finite domain axis {lo}:{hi}")));
            }
        }
        Ok(())
    }

    pub fn is_symmetric_cube(&self) -> bool {
        let (lo, hi) = self.axes[0];
        lo == -hi && self.axes.iter().all(|&a| a == (lo, hi))
    }

    /// Grid whose first axis spans this domain with `points` nodes per axis.
    pub fn grid_spec(&self, points: usize) -> Result<GridSpec> {
        if points < 3 || points.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "points per axis must be odd and >= 3, got {points}"
            )));
        }
        let m = (points - 1) / 2;
        let (lo, hi) = self.axes[0];
        Ok(GridSpec::new(self.axes.len(), m, 0.5 * (hi - lo) / m as f64))
    }

    /// Maps a lattice state affinely onto this box; the grid corners land on the box corners.
    pub fn point(&self, grid: &Grid, s: StateId) -> Vec<f64> {
        let m = grid.half_width() as f64;
        grid.multi_index(s)
            .into_iter()
            .zip(&self.axes)
            .map(|(n, &(lo, hi))| {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                if lo == -hi {
                    n as f64 * (half / m)
                } else {
                    mid + n as f64 * (half / m)
                }
            })
            .collect()
    }
}

/// Default points per axis: 201 in 1D, 101 otherwise.
pub fn default_points(dim: usize) -> usize {
    if dim == 1 {
        201
    } else {
        101
    }
}

/// Samples `f` at the grid's own coordinates `n_i δ`.
pub fn sample_on_grid(f: &TestFunction, grid: &Grid) -> Result<ScalarField> {
    check_arity(f, grid.dim())?;
    Ok(ScalarField::from_fn(grid, |s| f.eval(&grid.point(s))))
}

/// Samples `f` on `domain`, with the grid mapped affinely onto it.
pub fn sample_on_domain(f: &TestFunction, grid: &Grid, domain: &Domain) -> Result<ScalarField> {
    check_arity(f, grid.dim())?;
    domain.validate(grid.dim())?;
    Ok(ScalarField::from_fn(grid, |s| f.eval(&domain.point(grid, s))))
}

fn check_arity(f: &TestFunction, dim: usize) -> Result<()> {
    if f.arity.supports(dim) {
        Ok(())
    } else {
        Err(Error::ArityMismatch {
            name: f.name.to_string(),
            dim,
        })
    }
}

/// Convenience: function sampled on its default domain at `points` per axis.
pub fn default_problem(name: &str, dim: Option<usize>, points: Option<usize>) -> Result<(Grid, ScalarField)> {
    let f = lookup(name)?;
    let dim = dim.unwrap_or(f.arity.default_dim());
    let domain = f.default_domain(dim);
    let spec = domain.grid_spec(points.unwrap_or_else(|| default_points(dim)))?;
    let grid = Grid::new(spec)?;
    let field = sample_on_domain(&f, &grid, &domain)?;
    Ok((grid, field))
}
