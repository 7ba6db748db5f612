//! Exact discrete convex envelopes from lower convex hulls of the epigraph cloud.
//!
//! The envelope of grid samples at a node `x` is `min Σ λ_j f(p_j)` over convex
//! combinations of nodes with `Σ λ_j p_j = x`, which is the lower hull of the
//! points `(p, f(p))` evaluated over `x`. In 1D this is a monotone chain; in 2D a
//! 3D quickhull over lattice coordinates. All orientation tests use exact
//! predicates because grid clouds are full of collinear and coplanar subsets.

use std::collections::HashMap;

use robust::{orient2d, orient3d, Coord, Coord3D};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// One point per grid state: lattice coordinates and the sampled value.
#[derive(Clone, Debug, PartialEq)]
pub struct EpigraphCloud {
    pub dim: usize,
    pub points: Vec<(Vec<i64>, f64)>,
}

impl EpigraphCloud {
    pub fn from_grid(grid: &Grid, f: &ScalarField) -> Result<Self> {
        f.check_len(grid)?;
        if !f.all_finite() {
            return Err(Error::Input("epigraph cloud needs finite values".into()));
        }
        Ok(Self {
            dim: grid.dim(),
            points: grid.states().map(|s| (grid.multi_index(s), f.get(s))).collect(),
        })
    }
}

/// Lower convex hull of `(xs[i], fs[i])` evaluated at every `xs[i]`.
pub fn envelope_1d(xs: &[f64], fs: &[f64]) -> Result<Vec<f64>> {
    if xs.len() != fs.len() {
        return Err(Error::Input(format!(
            "{} abscissae but {} values",
            xs.len(),
            fs.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Input("need at least two points".into()));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Input("abscissae must be strictly increasing".into()));
    }
    if !fs.iter().chain(xs).all(|v| v.is_finite()) {
        return Err(Error::Input("non-finite input".into()));
    }

    let pt = |i: usize| Coord { x: xs[i], y: fs[i] };
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 && orient2d(pt(hull[hull.len() - 2]), pt(hull[hull.len() - 1]), pt(i)) <= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }

    let mut out = vec![0.0; xs.len()];
    for w in hull.windows(2) {
        let (i, k) = (w[0], w[1]);
        out[i] = fs[i];
        let span = xs[k] - xs[i];
        for j in i + 1..k {
            let t = (xs[j] - xs[i]) / span;
            out[j] = (1.0 - t) * fs[i] + t * fs[k];
        }
    }
    out[xs.len() - 1] = fs[xs.len() - 1];
    Ok(out)
}

/// Envelope of a field on a 1D or 2D grid.
pub fn envelope(grid: &Grid, f: &ScalarField) -> Result<ScalarField> {
    match grid.dim() {
        1 => {
            f.check_len(grid)?;
            let xs: Vec<f64> = grid.states().map(|s| grid.multi_index(s)[0] as f64).collect();
            envelope_1d(&xs, f).map(ScalarField::new)
        }
        2 => envelope_2d(grid, f),
        d => Err(Error::Config(format!(
            "exact envelopes are available for d <= 2, not d = {d}"
        ))),
    }
}

pub fn envelope_2d(grid: &Grid, f: &ScalarField) -> Result<ScalarField> {
    if grid.dim() != 2 {
        return Err(Error::Input(format!("envelope_2d needs a 2D grid, got d = {}", grid.dim())));
    }
    let cloud = EpigraphCloud::from_grid(grid, f)?;
    let lifted: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|(idx, v)| [idx[0] as f64, idx[1] as f64, *v])
        .collect();

    let Some(facets) = convex_hull_3d(&lifted) else {
        // Coplanar cloud: the graph is its own envelope.
        return Ok(f.clone());
    };

    let lattice: Vec<[i64; 2]> = cloud.points.iter().map(|(idx, _)| [idx[0], idx[1]]).collect();
    let m = grid.half_width() as i64;
    let mut env = vec![f64::NAN; grid.len()];
    for tri in facets {
        let [mut a, mut b, c] = tri.map(|v| v as usize);
        let mut area = cross(lattice[a], lattice[b], lattice[c]);
        // Outward normal pointing down means clockwise in the plane.
        if area >= 0 {
            continue;
        }
        std::mem::swap(&mut a, &mut b);
        area = -area;
        let (pa, pb, pc) = (lattice[a], lattice[b], lattice[c]);
        let lo = [pa[0].min(pb[0]).min(pc[0]), pa[1].min(pb[1]).min(pc[1])];
        let hi = [pa[0].max(pb[0]).max(pc[0]), pa[1].max(pb[1]).max(pc[1])];
        let areaf = area as f64;
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                let p = [i, j];
                let wa = cross(pb, pc, p);
                let wb = cross(pc, pa, p);
                let wc = cross(pa, pb, p);
                if wa < 0 || wb < 0 || wc < 0 {
                    continue;
                }
                let value = (wa as f64 / areaf) * f[a] + (wb as f64 / areaf) * f[b] + (wc as f64 / areaf) * f[c];
                let s = ((i + m) * (2 * m + 1) + (j + m)) as usize;
                if env[s].is_nan() || value > env[s] {
                    env[s] = value;
                }
            }
        }
    }
    if let Some(s) = env.iter().position(|v| v.is_nan()) {
        return Err(Error::Input(format!("lower hull does not cover node {s}")));
    }
    // The envelope lies in [min f, f]; clamp away interpolation round-off.
    let floor = f.min();
    for (e, &fx) in env.iter_mut().zip(f.iter()) {
        *e = e.clamp(floor, fx);
    }
    Ok(ScalarField::new(env))
}

fn cross(a: [i64; 2], b: [i64; 2], c: [i64; 2]) -> i64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

#[derive(Clone, Debug)]
struct Facet {
    v: [u32; 3],
    /// `adj[i]` lies across edge `(v[i], v[i+1])`.
    adj: [u32; 3],
    outside: Vec<u32>,
    normal: [f64; 3],
    offset: f64,
    alive: bool,
}

fn c3(p: &[f64; 3]) -> Coord3D<f64> {
    Coord3D {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

/// Strictly above the facet plane, with facets wound counter-clockwise seen from outside.
#[inline]
fn sees(pts: &[[f64; 3]], v: [u32; 3], p: u32) -> bool {
    orient3d(
        c3(&pts[v[0] as usize]),
        c3(&pts[v[1] as usize]),
        c3(&pts[v[2] as usize]),
        c3(&pts[p as usize]),
    ) < 0.0
}

fn plane(pts: &[[f64; 3]], v: [u32; 3]) -> ([f64; 3], f64) {
    let [a, b, c] = v.map(|i| pts[i as usize]);
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let w = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [
        u[1] * w[2] - u[2] * w[1],
        u[2] * w[0] - u[0] * w[2],
        u[0] * w[1] - u[1] * w[0],
    ];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(f64::MIN_POSITIVE);
    let n = n.map(|x| x / len);
    (n, n[0] * a[0] + n[1] * a[1] + n[2] * a[2])
}

fn collinear(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> bool {
    let proj = |i: usize, j: usize| {
        orient2d(
            Coord { x: a[i], y: a[j] },
            Coord { x: b[i], y: b[j] },
            Coord { x: c[i], y: c[j] },
        ) == 0.0
    };
    proj(0, 1) && proj(1, 2) && proj(0, 2)
}

/// Triangulated convex hull of a point set, as outward-wound vertex triples.
/// Returns `None` when every point lies on one plane.
fn convex_hull_3d(pts: &[[f64; 3]]) -> Option<Vec<[u32; 3]>> {
    let n = pts.len();
    if n < 4 {
        return None;
    }
    // Initial simplex from extreme points.
    let by = |key: &dyn Fn(&[f64; 3]) -> f64, max: bool| {
        (0..n)
            .max_by(|&i, &j| {
                let (ki, kj) = (key(&pts[i]), key(&pts[j]));
                let ord = ki.partial_cmp(&kj).unwrap();
                if max {
                    ord
                } else {
                    ord.reverse()
                }
            })
            .unwrap()
    };
    let i0 = by(&|p| p[0] + p[1], false);
    let i1 = by(&|p| p[0] + p[1], true);
    let i2 = (0..n)
        .filter(|&i| !collinear(&pts[i0], &pts[i1], &pts[i]))
        .max_by(|&i, &j| {
            let d = |k: usize| (pts[k][0] - pts[k][1]).abs();
            d(i).partial_cmp(&d(j)).unwrap()
        })?;
    let base = [i0 as u32, i1 as u32, i2 as u32];
    let (normal, offset) = plane(pts, base);
    let i3 = (0..n as u32)
        .filter(|&i| {
            orient3d(c3(&pts[i0]), c3(&pts[i1]), c3(&pts[i2]), c3(&pts[i as usize])) != 0.0
        })
        .max_by(|&i, &j| {
            let d = |k: u32| {
                let p = pts[k as usize];
                (normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2] - offset).abs()
            };
            d(i).partial_cmp(&d(j)).unwrap()
        })?;

    let simplex = [base[0], base[1], base[2], i3];
    let faces = [[0, 1, 2, 3], [0, 3, 1, 2], [1, 3, 2, 0], [2, 3, 0, 1]];
    let mut facets: Vec<Facet> = Vec::with_capacity(4 * n);
    for f in faces {
        let mut v = [simplex[f[0]], simplex[f[1]], simplex[f[2]]];
        if sees(pts, v, simplex[f[3]]) {
            v.swap(1, 2);
        }
        let (normal, offset) = plane(pts, v);
        facets.push(Facet {
            v,
            adj: [u32::MAX; 3],
            outside: Vec::new(),
            normal,
            offset,
            alive: true,
        });
    }
    link_by_edges(&mut facets, &[0, 1, 2, 3]);

    for p in 0..n as u32 {
        if simplex.contains(&p) {
            continue;
        }
        if let Some(f) = (0..4).find(|&f| sees(pts, facets[f].v, p)) {
            facets[f].outside.push(p);
        }
    }

    let mut pending: Vec<u32> = (0..4).collect();
    let mut visible = Vec::new();
    let mut mark: Vec<u32> = Vec::new();
    let mut stamp = 0u32;
    while let Some(fi) = pending.pop() {
        let fi = fi as usize;
        if !facets[fi].alive || facets[fi].outside.is_empty() {
            continue;
        }
        let apex = {
            let f = &facets[fi];
            *f.outside
                .iter()
                .max_by(|&&a, &&b| {
                    let d = |k: u32| {
                        let p = pts[k as usize];
                        f.normal[0] * p[0] + f.normal[1] * p[1] + f.normal[2] * p[2] - f.offset
                    };
                    d(a).partial_cmp(&d(b)).unwrap()
                })
                .unwrap()
        };

        // Visible region by flood fill from fi.
        stamp += 1;
        mark.resize(facets.len(), 0);
        visible.clear();
        visible.push(fi as u32);
        mark[fi] = stamp;
        let mut k = 0;
        while k < visible.len() {
            let f = visible[k] as usize;
            k += 1;
            for &nb in &facets[f].adj {
                let nb = nb as usize;
                if mark[nb] != stamp && sees(pts, facets[nb].v, apex) {
                    mark[nb] = stamp;
                    visible.push(nb as u32);
                }
            }
        }

        // Horizon edges keep the winding of the visible facet they bound.
        let mut created = Vec::new();
        let mut starts: HashMap<u32, u32> = HashMap::new();
        for &vf in &visible {
            let vf = vf as usize;
            for e in 0..3 {
                let nb = facets[vf].adj[e] as usize;
                if mark[nb] == stamp {
                    continue;
                }
                let a = facets[vf].v[e];
                let b = facets[vf].v[(e + 1) % 3];
                let v = [a, b, apex];
                let (normal, offset) = plane(pts, v);
                let id = facets.len() as u32;
                facets.push(Facet {
                    v,
                    adj: [nb as u32, u32::MAX, u32::MAX],
                    outside: Vec::new(),
                    normal,
                    offset,
                    alive: true,
                });
                let back = (0..3).find(|&j| facets[nb].adj[j] == vf as u32).unwrap();
                facets[nb].adj[back] = id;
                starts.insert(a, id);
                created.push(id);
            }
        }
        for &id in &created {
            let [_, b, _] = facets[id as usize].v;
            let next = starts[&b];
            facets[id as usize].adj[1] = next;
            facets[next as usize].adj[2] = id;
        }

        let mut orphans = Vec::new();
        for &vf in &visible {
            let f = &mut facets[vf as usize];
            f.alive = false;
            orphans.append(&mut f.outside);
        }
        for q in orphans {
            if q == apex {
                continue;
            }
            if let Some(&id) = created.iter().find(|&&id| sees(pts, facets[id as usize].v, q)) {
                facets[id as usize].outside.push(q);
            }
        }
        pending.extend(created);
    }

    Some(facets.into_iter().filter(|f| f.alive).map(|f| f.v).collect())
}

/// Pairs up facets sharing an edge in opposite directions.
fn link_by_edges(facets: &mut [Facet], ids: &[usize]) {
    let mut edges = HashMap::new();
    for &f in ids {
        for e in 0..3 {
            edges.insert((facets[f].v[e], facets[f].v[(e + 1) % 3]), (f, e));
        }
    }
    for &f in ids {
        for e in 0..3 {
            let (a, b) = (facets[f].v[e], facets[f].v[(e + 1) % 3]);
            let (g, _) = edges[&(b, a)];
            facets[f].adj[e] = g as u32;
        }
    }
}
