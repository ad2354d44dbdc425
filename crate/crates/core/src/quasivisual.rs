//! Quasi-visual and visual conditions on sequences of tile covers, pairing
//! indices, and distortion-function fitting.
//!
//! Constants are reported as `f64`: Euclidean ratios are irrational in general.
//! Tree covers compute distances exactly and only convert at the end; word
//! covers of the CSST bound tile distances from below by branch and bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::csst::{apply_word, tile_contains, tiles_intersect, CsstPoint, Word};
use crate::dyadic::DyadicPoint;
#[cfg(feature = "parallel")]
use crate::par::prelude::*;
use crate::par_iter;
use crate::tree::{Decomposition, MetricMode, SimplicialMetricTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QvError {
    #[error("level {level} has no tiles")]
    EmptyLevel { level: usize },
    #[error("tiles containing the two points still meet at the deepest level {depth}")]
    BudgetTooShallow { depth: usize },
    #[error("points {0} and {1} are at distance zero")]
    DegenerateMetric(usize, usize),
    #[error("need at least three points, got {0}")]
    TooFewPoints(usize),
}

/// A finite sequence of tile covers `𝒳⁰, 𝒳¹, …`.
pub trait LevelCover: Sync {
    fn level_count(&self) -> usize;
    fn tile_count(&self, level: usize) -> usize;
    fn diam(&self, level: usize, i: usize) -> f64;
    fn intersects(&self, a: (usize, usize), b: (usize, usize)) -> bool;
    /// A certified lower bound on `dist(X, Y)` for disjoint tiles of one level.
    fn dist_lower(&self, level: usize, i: usize, j: usize) -> f64;
    /// Cheap bounds `(lower, upper)` on the same distance.
    fn dist_bounds_cheap(&self, level: usize, i: usize, j: usize) -> (f64, f64) {
        let d = self.dist_lower(level, i, j);
        (d, d)
    }
    /// Tiles of `level_x` meeting tile `j` of `level_y`.
    fn intersecting(&self, level_y: usize, j: usize, level_x: usize) -> Vec<usize> {
        (0..self.tile_count(level_x))
            .filter(|&i| self.intersects((level_x, i), (level_y, j)))
            .collect()
    }
}

/// Covers that can locate points.
pub trait PointCover: LevelCover {
    type Point: Sync;
    fn contains(&self, level: usize, i: usize, p: &Self::Point) -> bool;
    fn point_dist(&self, p: &Self::Point, q: &Self::Point) -> f64;
}

/// Nested decompositions of one tree, with distances scaled by `scale`.
pub struct TreeCover<'a> {
    tree: &'a SimplicialMetricTree,
    levels: Vec<&'a Decomposition>,
    scale: f64,
    diams: Vec<Vec<f64>>,
    vertex_tiles: Vec<Vec<Vec<usize>>>,
}

impl<'a> TreeCover<'a> {
    pub fn new(tree: &'a SimplicialMetricTree, levels: Vec<&'a Decomposition>, scale: f64) -> Self {
        let diams = levels
            .iter()
            .map(|d| {
                par_iter!(&d.tiles)
                    .map(|t| tree.tile_diameter(t).to_f64() * scale)
                    .collect()
            })
            .collect();
        let vertex_tiles = levels
            .iter()
            .map(|d| {
                let mut vt = vec![Vec::new(); tree.vertex_count()];
                for (i, t) in d.tiles.iter().enumerate() {
                    for &v in &t.vertices {
                        vt[v].push(i);
                    }
                }
                vt
            })
            .collect();
        TreeCover {
            tree,
            levels,
            scale,
            diams,
            vertex_tiles,
        }
    }

    pub fn tiles_at_vertex(&self, level: usize, v: usize) -> &[usize] {
        &self.vertex_tiles[level][v]
    }
}

impl LevelCover for TreeCover<'_> {
    fn level_count(&self) -> usize {
        self.levels.len()
    }
    fn tile_count(&self, level: usize) -> usize {
        self.levels[level].tiles.len()
    }
    fn diam(&self, level: usize, i: usize) -> f64 {
        self.diams[level][i]
    }
    fn intersects(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        let (x, y) = (&self.levels[a.0].tiles[a.1], &self.levels[b.0].tiles[b.1]);
        let (small, big) = if x.vertices.len() <= y.vertices.len() {
            (x, y)
        } else {
            (y, x)
        };
        small.vertices.iter().any(|&v| big.contains(v))
    }
    fn dist_lower(&self, level: usize, i: usize, j: usize) -> f64 {
        let (x, y) = (&self.levels[level].tiles[i], &self.levels[level].tiles[j]);
        let d = if self.tree.mode() == MetricMode::Geodesic
            && !x.boundary.is_empty()
            && !y.boundary.is_empty()
        {
            // the arc between disjoint tiles leaves and enters through cut points
            x.boundary
                .iter()
                .flat_map(|&a| y.boundary.iter().map(move |&b| (a, b)))
                .map(|(a, b)| self.tree.dist(a, b))
                .min()
                .unwrap()
        } else {
            self.tree.subtree_distance(x, y)
        };
        d.to_f64() * self.scale
    }
    fn intersecting(&self, level_y: usize, j: usize, level_x: usize) -> Vec<usize> {
        let y = &self.levels[level_y].tiles[j];
        let mut out: Vec<usize> = if level_y >= level_x {
            // y sits inside one tile of the coarser level; only its vertices matter
            let anc = self.levels[level_x].edge_tile[y.edges[0]];
            let mut v = vec![anc];
            for &b in &self.levels[level_x].tiles[anc].boundary {
                if y.contains(b) {
                    v.extend_from_slice(&self.vertex_tiles[level_x][b]);
                }
            }
            v
        } else {
            y.vertices
                .iter()
                .flat_map(|&v| self.vertex_tiles[level_x][v].iter().copied())
                .collect()
        };
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl PointCover for TreeCover<'_> {
    type Point = usize;
    fn contains(&self, level: usize, i: usize, p: &usize) -> bool {
        self.levels[level].tiles[i].contains(*p)
    }
    fn point_dist(&self, p: &usize, q: &usize) -> f64 {
        self.tree.dist_f64(*p, *q) * self.scale
    }
}

/// Word tiles of the CSST with its Euclidean metric.
pub struct WordCover {
    levels: Vec<Vec<Word>>,
    centers: Vec<Vec<(f64, f64)>>,
}

impl WordCover {
    pub fn new(levels: Vec<Vec<Word>>) -> Self {
        let centers = levels
            .iter()
            .map(|l| {
                l.iter()
                    .map(|w| apply_word(w, DyadicPoint::ZERO).to_f64())
                    .collect()
            })
            .collect();
        WordCover { levels, centers }
    }

    /// `𝒳ⁿ = {𝒯_w : ℓ(w) = n}` for `n ≤ max_level`.
    pub fn standard(max_level: usize) -> Self {
        WordCover::new((0..=max_level).map(Word::all_of_len).collect())
    }

    pub fn words(&self, level: usize) -> &[Word] {
        &self.levels[level]
    }
}

fn radius(w: &Word) -> f64 {
    (-(w.len() as f64)).exp2()
}

fn center(w: &Word) -> (f64, f64) {
    apply_word(w, DyadicPoint::ZERO).to_f64()
}

fn gap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Bounds on `dist(𝒯_v, 𝒯_w)`, using `𝒯_u ⊂ B(g_u(0), 2^{-ℓ(u)})`.
pub fn word_tile_distance(v: &Word, w: &Word, rel_tol: f64) -> (f64, f64) {
    const MAX_PAIRS: usize = 20_000;
    const MAX_ROUNDS: usize = 14;
    let mut pairs = vec![(v.clone(), w.clone())];
    let mut upper = f64::INFINITY;
    let mut lower = 0.0;
    for _ in 0..MAX_ROUNDS {
        let scored: Vec<(f64, f64)> = pairs
            .iter()
            .map(|(a, b)| {
                let g = gap(center(a), center(b));
                ((g - radius(a) - radius(b)).max(0.0), g)
            })
            .collect();
        upper = scored.iter().map(|s| s.1).fold(upper, f64::min);
        lower = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        if upper - lower <= rel_tol * upper {
            break;
        }
        let keep: Vec<(Word, Word)> = pairs
            .into_iter()
            .zip(&scored)
            .filter(|(_, s)| s.0 <= upper)
            .map(|(p, _)| p)
            .collect();
        if keep.len() * 9 > MAX_PAIRS {
            break;
        }
        pairs = keep
            .iter()
            .flat_map(|(a, b)| {
                let sa: Vec<Word> = (1..=3).map(|k| a.push(k)).collect();
                let sb: Vec<Word> = (1..=3).map(|k| b.push(k)).collect();
                sa.into_iter()
                    .flat_map(move |x| sb.clone().into_iter().map(move |y| (x.clone(), y)))
            })
            .collect();
    }
    (lower, upper)
}

impl LevelCover for WordCover {
    fn level_count(&self) -> usize {
        self.levels.len()
    }
    fn tile_count(&self, level: usize) -> usize {
        self.levels[level].len()
    }
    fn diam(&self, level: usize, i: usize) -> f64 {
        2.0 * radius(&self.levels[level][i])
    }
    fn intersects(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        tiles_intersect(&self.levels[a.0][a.1], &self.levels[b.0][b.1])
    }
    fn dist_lower(&self, level: usize, i: usize, j: usize) -> f64 {
        word_tile_distance(&self.levels[level][i], &self.levels[level][j], 0.05).0
    }
    fn dist_bounds_cheap(&self, level: usize, i: usize, j: usize) -> (f64, f64) {
        let (a, b) = (&self.levels[level][i], &self.levels[level][j]);
        let g = gap(self.centers[level][i], self.centers[level][j]);
        ((g - radius(a) - radius(b)).max(0.0), g)
    }
}

impl PointCover for WordCover {
    type Point = CsstPoint;
    fn contains(&self, level: usize, i: usize, p: &CsstPoint) -> bool {
        tile_contains(&self.levels[level][i], p)
    }
    fn point_dist(&self, p: &CsstPoint, q: &CsstPoint) -> f64 {
        p.coords().dist_f64(&q.coords())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QvReport {
    pub levels: usize,
    pub tile_counts: Vec<usize>,
    /// (i): `diam X / diam Y` over intersecting tiles of one level.
    pub c_intersecting: f64,
    /// (ii): `dist(X, Y) / max(diam X, diam Y)` over disjoint tiles of one level.
    pub c_separated: Option<f64>,
    /// (iii): diameter ratio of intersecting tiles on consecutive levels.
    pub c_consecutive: f64,
    /// (iv): smallest `k₀` with `diam Y ≤ λ diam X` for `λ < 1`.
    pub k0: Option<usize>,
    pub lambda: Option<f64>,
    /// `diam X^{n+k} ≤ C ρ^k diam X^n` derived from (iii) and (iv).
    pub decay_c: Option<f64>,
    pub decay_rho: Option<f64>,
    /// `diam X^{n+k} ≥ τ^k diam X^n`.
    pub tau: f64,
    /// `descent[n][k]`: max of `diam Y / diam X` over `X ∈ 𝒳ⁿ`, `Y ∈ 𝒳^{n+k}` meeting.
    pub descent: Vec<Vec<f64>>,
    /// `ascent[n][k]`: the matching minimum.
    pub ascent: Vec<Vec<f64>>,
    pub pass: bool,
    pub failures: Vec<String>,
}

fn minmax_descent<C: LevelCover>(cover: &C, n: usize, m: usize) -> (f64, f64) {
    par_iter!(0..cover.tile_count(m))
        .map(|j| {
            let dy = cover.diam(m, j);
            cover
                .intersecting(m, j, n)
                .into_iter()
                .map(|i| dy / cover.diam(n, i))
                .fold((f64::INFINITY, 0.0f64), |acc, r| {
                    (acc.0.min(r), acc.1.max(r))
                })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)))
}

/// `min` over disjoint pairs of one level of `dist / denom(i, j)`, refining
/// only pairs whose cheap lower bound can still win.
fn min_separation<C: LevelCover>(
    cover: &C,
    level: usize,
    denom: &(dyn Fn(usize, usize) -> f64 + Sync),
) -> Option<f64> {
    let n = cover.tile_count(level);
    let disjoint = |i: usize, j: usize| !cover.intersects((level, i), (level, j));
    // two streaming passes keep memory linear in the tile count
    let best_hi = par_iter!(0..n)
        .map(|i| {
            (i + 1..n)
                .filter(|&j| disjoint(i, j))
                .map(|j| cover.dist_bounds_cheap(level, i, j).1 / denom(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .min_by(|a, b| a.total_cmp(b))
        .unwrap_or(f64::INFINITY);
    if !best_hi.is_finite() {
        return None;
    }
    let cand: Vec<(usize, usize)> = par_iter!(0..n)
        .map(|i| {
            (i + 1..n)
                .filter(|&j| {
                    disjoint(i, j)
                        && cover.dist_bounds_cheap(level, i, j).0 / denom(i, j) <= best_hi
                })
                .map(|j| (i, j))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    par_iter!(cand)
        .map(|(i, j)| cover.dist_lower(level, i, j) / denom(i, j))
        .min_by(|a, b| a.total_cmp(b))
}

/// Checks conditions (i)–(iv) on all built levels.
pub fn check_quasivisual<C: LevelCover>(cover: &C) -> Result<QvReport, QvError> {
    let l = cover.level_count();
    for n in 0..l {
        if cover.tile_count(n) == 0 {
            return Err(QvError::EmptyLevel { level: n });
        }
    }
    let mut failures = Vec::new();
    let mut c_i: f64 = 1.0;
    let mut c_ii: Option<f64> = None;
    for n in 0..l {
        let t = cover.tile_count(n);
        let r = par_iter!(0..t)
            .map(|i| {
                cover
                    .intersecting(n, i, n)
                    .into_iter()
                    .filter(|&j| j != i)
                    .map(|j| cover.diam(n, i) / cover.diam(n, j))
                    .fold(1.0f64, f64::max)
            })
            .max_by(|a, b| a.total_cmp(b))
            .unwrap_or(1.0);
        c_i = c_i.max(r);
        let sep = min_separation(cover, n, &|i, j| cover.diam(n, i).max(cover.diam(n, j)));
        if let Some(s) = sep {
            c_ii = Some(c_ii.map_or(s, |c: f64| c.min(s)));
        }
    }
    if let Some(s) = c_ii {
        if s <= 0.0 {
            failures.push("(ii) disjoint tiles at zero certified distance".to_string());
        }
    }
    let mut descent = vec![Vec::new(); l];
    let mut ascent = vec![Vec::new(); l];
    for n in 0..l {
        for m in n..l {
            let (lo, hi) = minmax_descent(cover, n, m);
            descent[n].push(hi);
            ascent[n].push(lo);
        }
    }
    let mut c_iii: f64 = 1.0;
    for n in 0..l.saturating_sub(1) {
        c_iii = c_iii.max(descent[n][1]).max(1.0 / ascent[n][1]);
    }
    let mut k0 = None;
    let mut lambda = None;
    for k in 1..l {
        let lam = (0..l - k).map(|n| descent[n][k]).fold(0.0f64, f64::max);
        if lam < 1.0 {
            k0 = Some(k);
            lambda = Some(lam);
            break;
        }
    }
    if k0.is_none() && l > 1 {
        failures.push(format!("(iv) no k0 < {l} with λ < 1"));
    }
    let (decay_c, decay_rho) = match (k0, lambda) {
        (Some(k), Some(lam)) => {
            let kf = k as f64;
            let rho = lam.powf(1.0 / kf);
            (
                Some(c_iii.powf(kf - 1.0) * lam.powf(-(kf - 1.0) / kf)),
                Some(rho),
            )
        }
        _ => (None, None),
    };
    Ok(QvReport {
        levels: l,
        tile_counts: (0..l).map(|n| cover.tile_count(n)).collect(),
        c_intersecting: c_i,
        c_separated: c_ii,
        c_consecutive: c_iii,
        k0,
        lambda,
        decay_c,
        decay_rho,
        tau: 1.0 / c_iii,
        descent,
        ascent,
        pass: failures.is_empty(),
        failures,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VisualReport {
    pub delta: f64,
    /// Range of `diam X / δⁿ`.
    pub c_diam_low: f64,
    pub c_diam_high: f64,
    /// Least-squares slope of `ln max_X diam X / δⁿ` against `n`.
    pub drift: f64,
    pub drift_tolerance: f64,
    /// `min dist(X, Y) / δⁿ` over disjoint tiles of one level.
    pub c_dist: Option<f64>,
    pub pass: bool,
    pub failures: Vec<String>,
    pub quasivisual: QvReport,
    /// A visual sequence must be quasi-visual.
    pub implication_holds: bool,
}

/// Default drift tolerance for [`check_visual`], in `ln` units per level.
pub const DRIFT_TOLERANCE: f64 = 0.2;

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Checks `diam X ≍ δⁿ` and `dist(X, Y) ≳ δⁿ`. On finitely many levels a
/// geometric drift of the diameter ratio is the failure signal.
pub fn check_visual<C: LevelCover>(
    cover: &C,
    delta: f64,
    drift_tolerance: f64,
) -> Result<VisualReport, QvError> {
    let qv = check_quasivisual(cover)?;
    let l = cover.level_count();
    let mut highs = Vec::with_capacity(l);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut c_dist: Option<f64> = None;
    for n in 0..l {
        let dn = delta.powi(n as i32);
        let (a, b) = (0..cover.tile_count(n))
            .map(|i| cover.diam(n, i) / dn)
            .fold((f64::INFINITY, 0.0f64), |acc, r| {
                (acc.0.min(r), acc.1.max(r))
            });
        lo = lo.min(a);
        hi = hi.max(b);
        highs.push(b.ln());
        if let Some(s) = min_separation(cover, n, &|_, _| dn) {
            c_dist = Some(c_dist.map_or(s, |c: f64| c.min(s)));
        }
    }
    let drift = slope(&highs);
    let mut failures = Vec::new();
    if drift.abs() > drift_tolerance {
        failures.push(format!("(i) diam/δⁿ drifts by {drift:.3} per level"));
    }
    if c_dist.is_some_and(|c| c <= 0.0) {
        failures.push("(ii) disjoint tiles at zero certified distance".to_string());
    }
    let pass = failures.is_empty();
    Ok(VisualReport {
        delta,
        c_diam_low: lo,
        c_diam_high: hi,
        drift,
        drift_tolerance,
        c_dist,
        pass,
        failures,
        implication_holds: !pass || qv.pass,
        quasivisual: qv,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingReport {
    /// Largest level at which tiles containing `x` and `y` meet.
    pub m: usize,
    pub diam: f64,
    pub dist: f64,
    /// `d(x, y) / diam X^m`.
    pub ratio: f64,
}

/// The pairing index `m(x, y)` and the comparison `d(x, y) ≍ diam X^m`.
pub fn pairing_index<C: PointCover>(
    cover: &C,
    x: &C::Point,
    y: &C::Point,
) -> Result<PairingReport, QvError> {
    let l = cover.level_count();
    let mut m = None;
    for n in 0..l {
        let xs: Vec<usize> = (0..cover.tile_count(n))
            .filter(|&i| cover.contains(n, i, x))
            .collect();
        let ys: Vec<usize> = (0..cover.tile_count(n))
            .filter(|&i| cover.contains(n, i, y))
            .collect();
        let meet = xs.iter().any(|&i| {
            ys.iter()
                .any(|&j| i == j || cover.intersects((n, i), (n, j)))
        });
        if meet {
            m = Some((n, xs[0]));
        } else {
            break;
        }
    }
    let (m, xi) = m.expect("level 0 covers everything");
    if m + 1 == l {
        return Err(QvError::BudgetTooShallow { depth: m });
    }
    let diam = cover.diam(m, xi);
    let dist = cover.point_dist(x, y);
    Ok(PairingReport {
        m,
        diam,
        dist,
        ratio: dist / diam,
    })
}

/// A metric on points `0..len()`.
pub trait FiniteMetric: Sync {
    fn len(&self) -> usize;
    fn dist(&self, i: usize, j: usize) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A metric given by a closure.
pub struct FnMetric<F>(pub usize, pub F);

impl<F: Fn(usize, usize) -> f64 + Sync> FiniteMetric for FnMetric<F> {
    fn len(&self) -> usize {
        self.0
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        (self.1)(i, j)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DistortionFit {
    pub alpha: f64,
    pub k: f64,
    pub samples: usize,
    pub exhaustive: bool,
    /// `max(0, t' - K η(t))` over samples.
    pub max_residual: f64,
    /// `(α, K(α))` for the whole grid.
    pub grid: Vec<(f64, f64)>,
}

/// Relative tolerance under which `K` is treated as 1 and grid values tie.
pub const FIT_TOLERANCE: f64 = 1e-12;

/// Fits `η(t) = K max{t^α, t^{1/α}}` to the ratio map of the identity
/// `(X, d1) → (X, d2)` over triples, for `α ∈ {0.05, 0.10, …, 1}`.
pub fn fit_distortion(
    d1: &dyn FiniteMetric,
    d2: &dyn FiniteMetric,
    budget: usize,
    seed: u64,
) -> Result<DistortionFit, QvError> {
    let n = d1.len();
    if n < 3 {
        return Err(QvError::TooFewPoints(n));
    }
    let full = n * (n - 1) * (n - 2);
    let exhaustive = full <= budget;
    let triples: Vec<(usize, usize, usize)> = if exhaustive {
        let mut v = Vec::with_capacity(full);
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    if x != y && y != z && x != z {
                        v.push((x, y, z));
                    }
                }
            }
        }
        v
    } else {
        const CHUNK: usize = 4096;
        let chunks = budget.div_ceil(CHUNK);
        par_iter!(0..chunks)
            .map(|c| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ c as u64);
                let take = CHUNK.min(budget - c * CHUNK);
                (0..take)
                    .map(|_| loop {
                        let (x, y, z) = (
                            rng.gen_range(0..n),
                            rng.gen_range(0..n),
                            rng.gen_range(0..n),
                        );
                        if x != y && y != z && x != z {
                            break (x, y, z);
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let mut samples = Vec::with_capacity(triples.len());
    for &(x, y, z) in &triples {
        for (a, b) in [(x, y), (x, z)] {
            if d1.dist(a, b) <= 0.0 || d2.dist(a, b) <= 0.0 {
                return Err(QvError::DegenerateMetric(a.min(b), a.max(b)));
            }
        }
        let t = d1.dist(x, y) / d1.dist(x, z);
        let tp = d2.dist(x, y) / d2.dist(x, z);
        samples.push((t, tp));
    }
    let eta = |t: f64, a: f64| t.powf(a).max(t.powf(1.0 / a));
    let grid: Vec<(f64, f64)> = (1..=20)
        .map(|k| {
            let a = k as f64 / 20.0;
            let raw = par_iter!(&samples)
                .map(|&(t, tp)| tp / eta(t, a))
                .max_by(|x, y| x.total_cmp(y))
                .unwrap_or(1.0);
            let kk = if raw <= 1.0 + FIT_TOLERANCE { 1.0 } else { raw };
            (a, kk)
        })
        .collect();
    let mut best = grid[0];
    for &(a, k) in &grid[1..] {
        if k <= best.1 * (1.0 + FIT_TOLERANCE) {
            best = (a, k);
        }
    }
    let max_residual = samples
        .iter()
        .map(|&(t, tp)| {
            let r = tp - best.1 * eta(t, best.0);
            if r > FIT_TOLERANCE * tp.max(1.0) {
                r
            } else {
                0.0
            }
        })
        .fold(0.0f64, f64::max);
    Ok(DistortionFit {
        alpha: best.0,
        k: best.1,
        samples: samples.len(),
        exhaustive,
        max_residual,
        grid,
    })
}
