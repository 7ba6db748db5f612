//! Truncated lattice `[-Mδ, Mδ]^d` and the controlled random-walk kernel on it.
//!
//! States are stored row-major with axis 0 varying slowest. A control is one of the
//! `d` coordinate axes; from a non-corner state the walk moves `±δ` along that axis
//! with probability ½ each. A move that would leave the lattice is replaced by a
//! self-loop. The `2^d` corners are absorbing and never dispatch transitions.
//!
//! Which axes a face state may actually choose is a solver setting, see
//! [`BoundaryRule`].

use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Dimension `d`.
    pub dim: usize,
    /// Half-width `M` in lattice steps; each axis has `2M + 1` points.
    pub half_width: usize,
    /// Lattice spacing `δ`.
    pub delta: f64,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: usize, delta: f64) -> Self {
        Self {
            dim,
            half_width,
            delta,
        }
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config(format!("dimension must be >= 1, got {}", self.dim)));
        }
        if self.half_width < 1 {
            return Err(Error::Config(format!(
                "half-width M must be >= 1, got {}",
                self.half_width
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "lattice spacing must be positive and finite, got {}",
                self.delta
            )));
        }
        if self.dim > 64 {
            return Err(Error::Config(format!("dimension {} exceeds 64", self.dim)));
        }
        let total = (self.side() as u128).checked_pow(self.dim as u32);
        match total {
            Some(n) if n <= (1u128 << 32) => Ok(()),
            _ => Err(Error::Config(format!(
                "grid with {} points per axis in {} dimensions is too large",
                self.side(),
                self.dim
            ))),
        }
    }
}

/// Which controls a face state may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    /// Only axes along which the state is not on the boundary. A face then behaves
    /// like a lower-dimensional grid whose own corners absorb.
    #[default]
    Tangential,
    /// Every axis; a move off the grid becomes a self-loop. Faces reflect, which
    /// lets the walk reach the global minimum from anywhere and collapses the
    /// fixed point to `min f` away from the corners when `d >= 2`.
    SelfLoop,
}

impl std::str::FromStr for BoundaryRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tangential" => Ok(Self::Tangential),
            "self-loop" => Ok(Self::SelfLoop),
            other => Err(Error::Config(format!(
                "unknown boundary rule `{other}` (expected tangential or self-loop)"
            ))),
        }
    }
}

/// Flat index of a lattice state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub usize);

/// Control `u = e_axis` (zero-based axis).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Direction(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateClass {
    Interior,
    /// At least one but not every coordinate sits on the boundary.
    Face,
    /// Every coordinate sits on the boundary; absorbing.
    Corner,
}

/// Successors of a non-corner state under one control. Always two entries of
/// mass ½; the first is the `-δ` move, the second the `+δ` move, either of which
/// may be a self-loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionList {
    entries: [(StateId, f64); 2],
}

impl TransitionList {
    pub fn entries(&self) -> &[(StateId, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    /// Probability of landing on `y`, merging duplicate entries.
    pub fn prob_of(&self, y: StateId) -> f64 {
        self.entries
            .iter()
            .filter(|&&(s, _)| s == y)
            .map(|&(_, p)| p)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    spec: GridSpec,
    side: usize,
    len: usize,
    strides: Vec<usize>,
    classes: Vec<StateClass>,
    corners: Vec<StateId>,
    /// `neighbors[s * dim + axis] = (minus, plus)` with self-loops substituted.
    neighbors: Vec<(u32, u32)>,
    /// Bit `i` set when `|n_i| = M`.
    blocked: Vec<u64>,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let side = spec.side();
        let len = side.pow(d as u32);
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * side;
        }

        let m = spec.half_width as i64;
        let mut classes = Vec::with_capacity(len);
        let mut corners = Vec::new();
        let mut neighbors = Vec::with_capacity(len * d);
        let mut blocked = Vec::with_capacity(len);
        let mut idx = vec![0i64; d];
        for s in 0..len {
            decode(s, side, m, &mut idx);
            let on_boundary = idx.iter().filter(|&&n| n.abs() == m).count();
            let class = if on_boundary == d {
                corners.push(StateId(s));
                StateClass::Corner
            } else if on_boundary > 0 {
                StateClass::Face
            } else {
                StateClass::Interior
            };
            classes.push(class);
            let mut mask = 0u64;
            for (axis, &n) in idx.iter().enumerate() {
                if n.abs() == m {
                    mask |= 1 << axis;
                }
                let minus = if n > -m { s - strides[axis] } else { s };
                let plus = if n < m { s + strides[axis] } else { s };
                neighbors.push((minus as u32, plus as u32));
            }
            blocked.push(mask);
        }

        Ok(Self {
            spec,
            side,
            len,
            strides,
            classes,
            corners,
            neighbors,
            blocked,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn half_width(&self) -> usize {
        self.spec.half_width
    }

    pub fn delta(&self) -> f64 {
        self.spec.delta
    }

    /// Points per axis, `2M + 1`.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.len).map(StateId)
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> {
        (0..self.spec.dim).map(Direction)
    }

    pub fn class(&self, s: StateId) -> StateClass {
        self.classes[s.0]
    }

    pub fn is_corner(&self, s: StateId) -> bool {
        self.classes[s.0] == StateClass::Corner
    }

    pub fn corners(&self) -> &[StateId] {
        &self.corners
    }

    /// Non-corner states, in index order.
    pub fn non_corner_states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.states().filter(move |&s| !self.is_corner(s))
    }

    /// Lattice coordinates `(n_1, ..., n_d)` with `-M <= n_i <= M`.
    pub fn multi_index(&self, s: StateId) -> Vec<i64> {
        let mut idx = vec![0; self.spec.dim];
        decode(s.0, self.side, self.spec.half_width as i64, &mut idx);
        idx
    }

    pub fn state_of(&self, multi_index: &[i64]) -> Option<StateId> {
        if multi_index.len() != self.spec.dim {
            return None;
        }
        let m = self.spec.half_width as i64;
        let mut flat = 0usize;
        for (&n, &stride) in multi_index.iter().zip(&self.strides) {
            if n.abs() > m {
                return None;
            }
            flat += (n + m) as usize * stride;
        }
        Some(StateId(flat))
    }

    /// Physical coordinates `[n_1 δ, ..., n_d δ]`.
    pub fn point(&self, s: StateId) -> Vec<f64> {
        self.multi_index(s)
            .into_iter()
            .map(|n| n as f64 * self.spec.delta)
            .collect()
    }

    /// `(minus, plus)` successors along `axis`, self-loops already substituted.
    /// Valid for every state including corners; solvers use it on the hot path.
    #[inline]
    pub fn neighbors(&self, s: StateId, u: Direction) -> (StateId, StateId) {
        let (a, b) = self.neighbors[s.0 * self.spec.dim + u.0];
        (StateId(a as usize), StateId(b as usize))
    }

    /// Bit mask of the axes a state may continue along under `rule`; empty at corners.
    #[inline]
    pub fn control_mask(&self, s: StateId, rule: BoundaryRule) -> u64 {
        if self.classes[s.0] == StateClass::Corner {
            return 0;
        }
        let all = if self.spec.dim == 64 { u64::MAX } else { (1u64 << self.spec.dim) - 1 };
        match rule {
            BoundaryRule::Tangential => all & !self.blocked[s.0],
            BoundaryRule::SelfLoop => all,
        }
    }

    /// Admissible controls of `s` under `rule`, lowest axis first.
    pub fn controls(&self, s: StateId, rule: BoundaryRule) -> impl Iterator<Item = Direction> {
        let mask = self.control_mask(s, rule);
        (0..self.spec.dim)
            .filter(move |&i| mask & (1 << i) != 0)
            .map(Direction)
    }

    pub fn transitions(&self, x: StateId, u: Direction) -> Result<TransitionList> {
        if self.is_corner(x) {
            return Err(Error::CornerTransition(x));
        }
        let (minus, plus) = self.neighbors(x, u);
        Ok(TransitionList {
            entries: [(minus, 0.5), (plus, 0.5)],
        })
    }

    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        x: StateId,
        u: Direction,
        rng: &mut R,
    ) -> Result<StateId> {
        if self.is_corner(x) {
            return Err(Error::CornerTransition(x));
        }
        Ok(self.sample_unchecked(x, u, rng))
    }

    #[inline]
    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(
        &self,
        x: StateId,
        u: Direction,
        rng: &mut R,
    ) -> StateId {
        let (minus, plus) = self.neighbors(x, u);
        if rng.gen::<bool>() {
            plus
        } else {
            minus
        }
    }

    /// True when every `|n_i| <= limit`.
    pub fn within(&self, s: StateId, limit: f64) -> bool {
        self.multi_index(s).iter().all(|&n| (n.abs() as f64) <= limit)
    }
}

fn decode(mut flat: usize, side: usize, m: i64, out: &mut [i64]) {
    for slot in out.iter_mut().rev() {
        *slot = (flat % side) as i64 - m;
        flat /= side;
    }
}

/// One real value per lattice state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(StateId) -> f64) -> Self {
        Self {
            values: grid.states().map(&mut f).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, s: StateId) -> f64 {
        self.values[s.0]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Fails unless the field has one entry per state of `grid`.
    pub fn check_len(&self, grid: &Grid) -> Result<()> {
        if self.values.len() != grid.len() {
            return Err(Error::Input(format!(
                "field has {} entries but the grid has {} states",
                self.values.len(),
                grid.len()
            )));
        }
        Ok(())
    }
}

impl Deref for ScalarField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for ScalarField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
