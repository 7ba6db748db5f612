//! Q-learning for the stopping problem.
//!
//! Both learners replace the expectation in Q-value iteration by a simulated
//! successor and relax towards it with the step size `a(n) = 1 / (1 + n / n0)`:
//!
//! ```text
//! Q(x,u,z) += a(n) * ( z * min_{u',z'} Q(X', u', z') + (1 - z) f(x) - Q(x,u,z) )
//! ```
//!
//! The synchronous learner updates every entry each step from an independent
//! successor per `(x, u)`. The asynchronous learner follows a single trajectory and
//! updates only the entry it visits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{Choice, QTable};
use crate::error::{Error, Result};
use crate::grid::{BoundaryRule, Direction, Grid, ScalarField, StateId};

pub const DEFAULT_N0: f64 = 1_000_000.0;

/// `a(n) = 1 / (1 + n / n0)`.
#[inline]
pub fn step_size(n: u64, n0: f64) -> f64 {
    1.0 / (1.0 + n as f64 / n0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// `U(n)` uniform over admissible axes, `Z(n)` uniform over stop/continue.
    #[default]
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Initial value `L` off the corners; `max f + 1` when unset. Must exceed `max f`.
    pub init_level: Option<f64>,
    /// Step-size scale `n0`.
    pub n0: f64,
    pub total_steps: u64,
    pub behavior: Behavior,
    /// Steps before an episode restarts; `10 (2M + 1)` when unset.
    pub episode_cap: Option<usize>,
    pub seed: u64,
    /// Count steps per entry instead of globally (asynchronous learner only).
    pub local_clocks: bool,
    pub boundary: BoundaryRule,
    /// Worker threads for the synchronous learner.
    pub threads: usize,
    /// Keep the asynchronous trajectory in the outcome.
    pub record_trajectory: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            init_level: None,
            n0: DEFAULT_N0,
            total_steps: 2_000_000,
            behavior: Behavior::Uniform,
            episode_cap: None,
            seed: 0,
            local_clocks: false,
            boundary: BoundaryRule::Tangential,
            threads: 1,
            record_trajectory: false,
        }
    }
}

impl LearnConfig {
    pub fn resolved_level(&self, f: &ScalarField) -> f64 {
        self.init_level.unwrap_or(f.max() + 1.0)
    }

    pub fn resolved_episode_cap(&self, grid: &Grid) -> usize {
        self.episode_cap.unwrap_or(10 * grid.side())
    }

    fn validate(&self) -> Result<()> {
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return Err(Error::Config(format!("n0 must be positive, got {}", self.n0)));
        }
        if self.total_steps < 1 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if self.episode_cap == Some(0) {
            return Err(Error::Config("episode cap must be >= 1".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }
}

/// `L` off the corners, `f` on them.
pub fn init_q(grid: &Grid, f: &ScalarField, level: f64, rule: BoundaryRule) -> Result<QTable> {
    f.check_len(grid)?;
    let max = f.max();
    if !(level > max) || !level.is_finite() {
        return Err(Error::Config(format!(
            "initial level L = {level} must be finite and exceed max f = {max}"
        )));
    }
    let mut q = QTable::new(grid, rule, level);
    q.pin_corners(grid, f);
    Ok(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: StateId,
    pub direction: Direction,
    pub choice: Choice,
    pub next_state: StateId,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Indices into `steps` where an episode begins.
    pub episode_starts: Vec<usize>,
}

/// Visit statistics over the learnable entries (non-corner state, admissible axis, choice).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub entries: usize,
    pub visited: usize,
    pub min_visits: u64,
}

impl Coverage {
    pub fn complete(&self) -> bool {
        self.visited == self.entries
    }
}

#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub q: QTable,
    pub steps: u64,
    pub episodes: u64,
    pub coverage: Coverage,
    /// Smallest and largest value written by any update.
    pub update_range: (f64, f64),
    pub trajectory: Option<Trajectory>,
}

fn coverage(grid: &Grid, q: &QTable, visits: &[u64]) -> Coverage {
    let mut entries = 0;
    let mut visited = 0;
    let mut min_visits = u64::MAX;
    for x in grid.non_corner_states() {
        for u in grid.directions().filter(|&u| q.admissible(x, u)) {
            for z in Choice::ALL {
                let v = visits[q.index(x, u, z)];
                entries += 1;
                visited += usize::from(v > 0);
                min_visits = min_visits.min(v);
            }
        }
    }
    Coverage {
        entries,
        visited,
        min_visits: if entries == 0 { 0 } else { min_visits },
    }
}

pub fn asynchronous_q_learning(grid: &Grid, f: &ScalarField, cfg: &LearnConfig) -> Result<LearnOutcome> {
    cfg.validate()?;
    let mut q = init_q(grid, f, cfg.resolved_level(f), cfg.boundary)?;
    let cap = cfg.resolved_episode_cap(grid);
    let starts: Vec<StateId> = grid.non_corner_states().collect();
    if starts.is_empty() {
        return Err(Error::Config("grid has no non-corner states".into()));
    }
    let controls: Vec<Vec<Direction>> = grid
        .states()
        .map(|s| grid.controls(s, cfg.boundary).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut visits = vec![0u64; q.values().len()];
    let mut trajectory = cfg.record_trajectory.then(Trajectory::default);
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut episodes = 1;
    let mut x = *starts.choose(&mut rng).unwrap();
    let mut episode_len = 0;
    if let Some(t) = trajectory.as_mut() {
        t.episode_starts.push(0);
    }

    for n in 0..cfg.total_steps {
        let u = *controls[x.0].choose(&mut rng).unwrap();
        let z = if rng.gen::<bool>() { Choice::Continue } else { Choice::Stop };
        let y = grid.sample_unchecked(x, u, &mut rng);

        let target = match z {
            Choice::Continue => q.state_min(y),
            Choice::Stop => f.get(x),
        };
        let e = q.index(x, u, z);
        let clock = if cfg.local_clocks { visits[e] } else { n };
        let old = q.values()[e];
        let new = old + step_size(clock, cfg.n0) * (target - old);
        q.values_mut()[e] = new;
        visits[e] += 1;
        range = (range.0.min(new), range.1.max(new));

        if let Some(t) = trajectory.as_mut() {
            t.steps.push(TrajectoryStep {
                state: x,
                direction: u,
                choice: z,
                next_state: y,
            });
        }

        episode_len += 1;
        if grid.is_corner(y) || episode_len >= cap {
            x = *starts.choose(&mut rng).unwrap();
            episode_len = 0;
            if n + 1 < cfg.total_steps {
                episodes += 1;
                if let Some(t) = trajectory.as_mut() {
                    t.episode_starts.push(n as usize + 1);
                }
            }
        } else {
            x = y;
        }
    }

    let coverage = coverage(grid, &q, &visits);
    Ok(LearnOutcome {
        q,
        steps: cfg.total_steps,
        episodes,
        coverage,
        update_range: range,
        trajectory,
    })
}

/// Every learnable entry moves each step. Successors come from one random stream
/// per state, split from the seed, so the result does not depend on `threads`.
pub fn synchronous_q_learning(grid: &Grid, f: &ScalarField, cfg: &LearnConfig) -> Result<LearnOutcome> {
    cfg.validate()?;
    let mut cur = init_q(grid, f, cfg.resolved_level(f), cfg.boundary)?;
    let mut next = cur.clone();
    let mut rngs: Vec<ChaCha8Rng> = (0..grid.len())
        .map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(s as u64);
            r
        })
        .collect();
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?,
        )
    } else {
        None
    };
    let width = 2 * grid.dim();
    let states_per_chunk = match &pool {
        Some(p) => grid.len().div_ceil(4 * p.current_num_threads()).max(16),
        None => grid.len(),
    };

    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for n in 0..cfg.total_steps {
        let a = step_size(n, cfg.n0);
        let src = &cur;
        let update = |first: usize, rows: &mut [f64], rngs: &mut [ChaCha8Rng]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (k, (row, rng)) in rows.chunks_mut(width).zip(rngs.iter_mut()).enumerate() {
                let x = StateId(first + k);
                row.copy_from_slice(src.row(x));
                if grid.is_corner(x) {
                    continue;
                }
                for u in grid.directions().filter(|&u| src.admissible(x, u)) {
                    let y = grid.sample_unchecked(x, u, rng);
                    let stop = &mut row[2 * u.0];
                    *stop += a * (f[x.0] - *stop);
                    let cont = src.state_min(y);
                    let go = &mut row[2 * u.0 + 1];
                    *go += a * (cont - *go);
                    lo = lo.min(row[2 * u.0]).min(row[2 * u.0 + 1]);
                    hi = hi.max(row[2 * u.0]).max(row[2 * u.0 + 1]);
                }
            }
            (lo, hi)
        };
        let (lo, hi) = match &pool {
            None => update(0, next.values_mut(), &mut rngs),
            Some(p) => p.install(|| {
                next.values_mut()
                    .par_chunks_mut(states_per_chunk * width)
                    .zip(rngs.par_chunks_mut(states_per_chunk))
                    .enumerate()
                    .map(|(i, (rows, r))| update(i * states_per_chunk, rows, r))
                    .reduce(
                        || (f64::INFINITY, f64::NEG_INFINITY),
                        |a, b| (a.0.min(b.0), a.1.max(b.1)),
                    )
            }),
        };
        range = (range.0.min(lo), range.1.max(hi));
        std::mem::swap(&mut cur, &mut next);
    }

    let visits_each = cfg.total_steps;
    let visits = vec![visits_each; cur.values().len()];
    let coverage = coverage(grid, &cur, &visits);
    Ok(LearnOutcome {
        q: cur,
        steps: cfg.total_steps,
        episodes: 0,
        coverage,
        update_range: range,
        trajectory: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{extract_value, value_iteration, SolveConfig};
    use crate::functions::default_problem;
    use crate::grid::GridSpec;

    fn dw51() -> (Grid, ScalarField) {
        default_problem("doublewell", Some(1), Some(51)).unwrap()
    }

    fn sup_gap(a: &ScalarField, b: &ScalarField) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn step_schedule() {
        assert_eq!(step_size(0, DEFAULT_N0), 1.0);
        assert_eq!(step_size(1_000_000, DEFAULT_N0), 0.5);
        assert!((step_size(2_000_000, DEFAULT_N0) - 1.0 / 3.0).abs() < 1e-15);
        let mut prev = step_size(0, DEFAULT_N0);
        for n in (1..5_000_000).step_by(99_991) {
            let a = step_size(n, DEFAULT_N0);
            assert!(a > 0.0 && a < prev);
            prev = a;
        }
    }

    #[test]
    fn initial_table() {
        let grid = Grid::new(GridSpec::new(1, 3, 1.0)).unwrap();
        let f = ScalarField::new(vec![1.7, 0.0, 3.0, 1.0, 2.0, 0.5, 2.5]);
        let q = init_q(&grid, &f, 4.0, BoundaryRule::Tangential).unwrap();
        for x in grid.non_corner_states() {
            assert!(q.row(x).iter().all(|&v| v == 4.0));
        }
        assert!(q.row(StateId(0)).iter().all(|&v| v == 1.7));
        assert!(q.row(StateId(6)).iter().all(|&v| v == 2.5));
        assert!(init_q(&grid, &f, 3.0, BoundaryRule::Tangential).is_err());
        assert!(init_q(&grid, &f, 2.0, BoundaryRule::Tangential).is_err());
    }

    #[test]
    fn stop_entries_reach_f_without_noise() {
        let (grid, f) = dw51();
        let cfg = LearnConfig {
            total_steps: 200,
            n0: 10.0,
            ..LearnConfig::default()
        };
        let out = synchronous_q_learning(&grid, &f, &cfg).unwrap();
        // The first step uses a(0) = 1, which lands exactly on f.
        for x in grid.non_corner_states() {
            assert_eq!(out.q.get(x, Direction(0), Choice::Stop), f.get(x));
        }
    }

    #[test]
    fn asynchronous_stop_step_touches_one_entry() {
        let (grid, f) = dw51();
        let base = LearnConfig {
            record_trajectory: true,
            total_steps: 400,
            ..LearnConfig::default()
        };
        let out = asynchronous_q_learning(&grid, &f, &base).unwrap();
        let traj = out.trajectory.unwrap();
        let n = traj.steps.iter().position(|s| s.choice == Choice::Stop).unwrap();
        let before = asynchronous_q_learning(&grid, &f, &LearnConfig { total_steps: n as u64, ..base.clone() }).unwrap();
        let after = asynchronous_q_learning(&grid, &f, &LearnConfig { total_steps: n as u64 + 1, ..base }).unwrap();
        let step = traj.steps[n];
        let changed = before.q.index(step.state, step.direction, Choice::Stop);
        for (i, (a, b)) in before.q.values().iter().zip(after.q.values()).enumerate() {
            if i != changed {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn trajectory_structure() {
        let (grid, f) = dw51();
        let cfg = LearnConfig {
            total_steps: 20_000,
            record_trajectory: true,
            episode_cap: Some(40),
            ..LearnConfig::default()
        };
        let out = asynchronous_q_learning(&grid, &f, &cfg).unwrap();
        let t = out.trajectory.unwrap();
        assert_eq!(t.steps.len(), 20_000);
        assert_eq!(t.episode_starts.len() as u64, out.episodes);
        for w in t.steps.windows(2) {
            let p = grid.transitions(w[0].state, w[0].direction).unwrap();
            assert!(p.prob_of(w[0].next_state) > 0.0);
        }
        let mut bounds = t.episode_starts.clone();
        bounds.push(t.steps.len());
        for ep in bounds.windows(2) {
            let steps = &t.steps[ep[0]..ep[1]];
            assert!(steps.iter().all(|s| !grid.is_corner(s.state)));
            for w in steps.windows(2) {
                assert_eq!(w[0].next_state, w[1].state);
            }
            let last = steps.last().unwrap();
            if ep[1] < t.steps.len() {
                assert!(grid.is_corner(last.next_state) || steps.len() == 40);
            }
        }
    }

    #[test]
    fn corners_frozen_and_values_bounded() {
        let (grid, f) = default_problem("rastrigin", None, Some(11)).unwrap();
        let cfg = LearnConfig {
            total_steps: 50_000,
            ..LearnConfig::default()
        };
        let level = cfg.resolved_level(&f);
        for out in [
            asynchronous_q_learning(&grid, &f, &cfg).unwrap(),
            synchronous_q_learning(&grid, &f, &LearnConfig { total_steps: 300, ..cfg.clone() }).unwrap(),
        ] {
            for &c in grid.corners() {
                assert!(out.q.row(c).iter().all(|&v| v == f.get(c)));
            }
            assert!(out.update_range.0 >= f.min() - 1e-12);
            assert!(out.update_range.1 <= level + 1e-12);
            assert!(out.q.values().iter().all(|&v| v >= f.min() - 1e-12 && v <= level + 1e-12));
        }
    }

    #[test]
    fn coverage_after_enough_steps() {
        let (grid, f) = default_problem("doublewell", Some(2), Some(9)).unwrap();
        let entries_bound = (grid.len() * grid.dim() * 2) as u64;
        let out = asynchronous_q_learning(&grid, &f, &LearnConfig {
            total_steps: 100 * entries_bound,
            ..LearnConfig::default()
        })
        .unwrap();
        assert!(out.coverage.complete(), "{:?}", out.coverage);
    }

    #[test]
    fn determinism() {
        let (grid, f) = dw51();
        let cfg = LearnConfig {
            total_steps: 30_000,
            ..LearnConfig::default()
        };
        let a = asynchronous_q_learning(&grid, &f, &cfg).unwrap();
        let b = asynchronous_q_learning(&grid, &f, &cfg).unwrap();
        assert_eq!(a.q, b.q);
        let s1 = synchronous_q_learning(&grid, &f, &LearnConfig { total_steps: 500, ..cfg.clone() }).unwrap();
        let s4 = synchronous_q_learning(&grid, &f, &LearnConfig { total_steps: 500, threads: 4, ..cfg }).unwrap();
        assert_eq!(s1.q, s4.q);
    }

    #[test]
    fn convex_input_is_learned() {
        let (grid, f) = default_problem("quadratic", Some(1), Some(51)).unwrap();
        let dp = value_iteration(&grid, &f, &SolveConfig::default()).unwrap().values;
        let bound = 0.05 * (f.max() - f.min());
        let cfg = LearnConfig {
            n0: 1_000.0,
            total_steps: 100_000,
            ..LearnConfig::default()
        };
        let sync = synchronous_q_learning(&grid, &f, &cfg).unwrap();
        assert!(sup_gap(&extract_value(&sync.q), &dp) <= bound);
        let cfg = LearnConfig { total_steps: 2_000_000, ..cfg };
        let asynchronous = asynchronous_q_learning(&grid, &f, &cfg).unwrap();
        assert!(sup_gap(&extract_value(&asynchronous.q), &dp) <= bound);
    }

    #[test]
    fn rejects_bad_config() {
        let (grid, f) = dw51();
        for cfg in [
            LearnConfig { total_steps: 0, ..LearnConfig::default() },
            LearnConfig { episode_cap: Some(0), ..LearnConfig::default() },
            LearnConfig { init_level: Some(f.max()), ..LearnConfig::default() },
            LearnConfig { n0: 0.0, ..LearnConfig::default() },
        ] {
            assert!(matches!(asynchronous_q_learning(&grid, &f, &cfg), Err(Error::Config(_))));
            assert!(matches!(synchronous_q_learning(&grid, &f, &cfg), Err(Error::Config(_))));
        }
    }
}
