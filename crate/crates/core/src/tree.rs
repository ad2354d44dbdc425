//! Finite simplicial metric trees.
//!
//! Edge lengths are stored as integer numerators over one common
//! denominator, so path lengths are exact integers. Euclidean trees carry
//! dyadic vertex positions and compare squared distances exactly.

use std::collections::VecDeque;

use num::{One, Signed, Zero};
use petgraph::unionfind::UnionFind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{exact_sqrt, lcm, to_f64, DyadicPoint};
#[cfg(feature = "parallel")]
use crate::par::prelude::*;
use crate::par_iter;
use crate::Rational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("not a tree: {0}")]
    NotATree(String),
    #[error("edge {edge} has non-positive length")]
    NonPositiveLength { edge: usize },
    #[error("euclidean tree needs a position for every vertex")]
    MissingPositions,
    #[error("edge {edge}: stated length does not match the distance of its endpoints")]
    PositionMismatch { edge: usize },
    #[error("common denominator of edge lengths exceeds 2^62")]
    DenominatorTooLarge,
    #[error("vertex {0} does not exist")]
    UnknownVertex(usize),
    #[error("edge {0} does not exist")]
    UnknownEdge(usize),
    #[error("interior parameter must lie strictly between 0 and 1")]
    BadParameter,
    #[error("leaf vertex {0} cannot be a cut point")]
    LeafInCutSet(usize),
    #[error("cut point {0} is an interior edge point; subdivide first")]
    InteriorCutPoint(usize),
    #[error("fine cut set does not contain coarse cut point {0}")]
    NotASuperset(usize),
    #[error("position of a subdivision point is not dyadic")]
    NonDyadicSubdivision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    Geodesic,
    Euclidean,
}

/// A vertex, or a point inside an edge at parameter `t ∈ (0,1)` from its first end.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TreePoint {
    Vertex(usize),
    Interior { edge: usize, t: Rational },
}

/// A distance, stored squared so that Euclidean values stay exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dist(Rational);

impl Dist {
    pub fn zero() -> Self {
        Dist(Rational::zero())
    }
    pub fn from_len(r: Rational) -> Self {
        Dist(r * r)
    }
    pub fn from_sq(r: Rational) -> Self {
        Dist(r)
    }
    pub fn sq(&self) -> Rational {
        self.0
    }
    pub fn exact(&self) -> Option<Rational> {
        exact_sqrt(&self.0)
    }
    pub fn to_f64(&self) -> f64 {
        to_f64(&self.0).sqrt()
    }
    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
    pub fn scale(&self, factor: &Rational) -> Dist {
        Dist(self.0 * factor * factor)
    }
}

impl Serialize for Dist {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.exact() {
            Some(r) => s.serialize_str(&crate::dyadic::fmt_rational(&r)),
            None => s.serialize_str(&format!("sqrt({})", crate::dyadic::fmt_rational(&self.0))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimplicialMetricTree {
    mode: MetricMode,
    edges: Vec<(usize, usize)>,
    len: Vec<i128>,
    denom: i128,
    positions: Option<Vec<DyadicPoint>>,
    marks: Vec<usize>,
    truncation: Option<Rational>,
    adj: Vec<Vec<(usize, usize)>>,
    parent: Vec<usize>,
    depth: Vec<i128>,
    hops: Vec<u32>,
    up: Vec<Vec<u32>>,
    order: Vec<usize>,
}

impl SimplicialMetricTree {
    /// Validates and indexes a tree on vertices `0..n`.
    pub fn new(
        mode: MetricMode,
        n: usize,
        edges: Vec<(usize, usize, Rational)>,
        positions: Option<Vec<DyadicPoint>>,
        marks: Vec<usize>,
    ) -> Result<Self, TreeError> {
        if n < 2 {
            return Err(TreeError::NotATree("fewer than two vertices".into()));
        }
        if edges.len() != n - 1 {
            return Err(TreeError::NotATree(format!(
                "{n} vertices but {} edges",
                edges.len()
            )));
        }
        let mut denom = 1i128;
        for (i, (u, v, l)) in edges.iter().enumerate() {
            if *u >= n || *v >= n {
                return Err(TreeError::UnknownVertex((*u).max(*v)));
            }
            if u == v {
                return Err(TreeError::NotATree(format!("edge {i} is a loop")));
            }
            if !l.is_positive() {
                return Err(TreeError::NonPositiveLength { edge: i });
            }
            denom = lcm(denom, *l.denom());
            if denom > 1i128 << 62 {
                return Err(TreeError::DenominatorTooLarge);
            }
        }
        if let Some(p) = &positions {
            if p.len() != n {
                return Err(TreeError::MissingPositions);
            }
        }
        if mode == MetricMode::Euclidean {
            let p = positions.as_ref().ok_or(TreeError::MissingPositions)?;
            for (i, (u, v, l)) in edges.iter().enumerate() {
                if p[*u].dist_sq(&p[*v]) != l * l {
                    return Err(TreeError::PositionMismatch { edge: i });
                }
            }
        }
        for &m in &marks {
            if m >= n {
                return Err(TreeError::UnknownVertex(m));
            }
        }
        let len = edges
            .iter()
            .map(|(_, _, l)| l.numer() * (denom / l.denom()))
            .collect();
        let mut adj = vec![Vec::new(); n];
        for (i, (u, v, _)) in edges.iter().enumerate() {
            adj[*u].push((*v, i));
            adj[*v].push((*u, i));
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        let mut t = SimplicialMetricTree {
            mode,
            edges: edges.iter().map(|(u, v, _)| (*u, *v)).collect(),
            len,
            denom,
            positions,
            marks,
            truncation: None,
            adj,
            parent: Vec::new(),
            depth: Vec::new(),
            hops: Vec::new(),
            up: Vec::new(),
            order: Vec::new(),
        };
        t.index()?;
        Ok(t)
    }

    fn index(&mut self) -> Result<(), TreeError> {
        let n = self.adj.len();
        let mut parent = vec![usize::MAX; n];
        let mut depth = vec![0i128; n];
        let mut hops = vec![0u32; n];
        let mut order = Vec::with_capacity(n);
        parent[0] = 0;
        let mut q = VecDeque::from([0usize]);
        while let Some(v) = q.pop_front() {
            order.push(v);
            for &(w, e) in &self.adj[v] {
                if parent[w] == usize::MAX {
                    parent[w] = v;
                    depth[w] = depth[v] + self.len[e];
                    hops[w] = hops[v] + 1;
                    q.push_back(w);
                }
            }
        }
        if order.len() != n {
            return Err(TreeError::NotATree("graph is disconnected".into()));
        }
        let levels = (usize::BITS - n.leading_zeros()).max(1) as usize;
        let mut up = vec![parent.iter().map(|&p| p as u32).collect::<Vec<_>>()];
        for k in 1..levels {
            let prev = &up[k - 1];
            let next = (0..n).map(|v| prev[prev[v] as usize]).collect();
            up.push(next);
        }
        self.parent = parent;
        self.depth = depth;
        self.hops = hops;
        self.up = up;
        self.order = order;
        Ok(())
    }

    /// Records that this finite tree truncates a larger one, with height
    /// measurements low by at most `bound`.
    pub fn with_truncation(mut self, bound: Rational) -> Self {
        self.truncation = Some(bound);
        self
    }

    pub fn truncation(&self) -> Option<Rational> {
        self.truncation
    }

    pub fn mode(&self) -> MetricMode {
        self.mode
    }
    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }
    pub fn edge_length(&self, e: usize) -> Rational {
        Rational::new(self.len[e], self.denom)
    }
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adj[v]
    }
    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }
    pub fn is_branch_point(&self, v: usize) -> bool {
        self.degree(v) >= 3
    }
    pub fn is_leaf(&self, v: usize) -> bool {
        self.degree(v) == 1
    }
    pub fn positions(&self) -> Option<&[DyadicPoint]> {
        self.positions.as_deref()
    }
    pub fn marks(&self) -> &[usize] {
        &self.marks
    }
    pub fn with_marks(mut self, marks: Vec<usize>) -> Self {
        self.marks = marks;
        self
    }
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.vertex_count())
            .filter(|&v| self.is_leaf(v))
            .collect()
    }
    pub fn branch_points(&self) -> Vec<usize> {
        (0..self.vertex_count())
            .filter(|&v| self.is_branch_point(v))
            .collect()
    }

    /// Same combinatorics with geodesic metric and all lengths scaled by `factor`.
    pub fn rescaled(&self, factor: Rational) -> Result<Self, TreeError> {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .map(|(e, &(u, v))| (u, v, self.edge_length(e) * factor))
            .collect();
        let mut t = SimplicialMetricTree::new(
            MetricMode::Geodesic,
            self.vertex_count(),
            edges,
            None,
            self.marks.clone(),
        )?;
        t.truncation = self.truncation.map(|b| b * factor);
        Ok(t)
    }

    pub fn lca(&self, mut u: usize, mut v: usize) -> usize {
        if self.hops[u] < self.hops[v] {
            std::mem::swap(&mut u, &mut v);
        }
        let mut diff = self.hops[u] - self.hops[v];
        let mut k = 0;
        while diff > 0 {
            if diff & 1 == 1 {
                u = self.up[k][u] as usize;
            }
            diff >>= 1;
            k += 1;
        }
        if u == v {
            return u;
        }
        for k in (0..self.up.len()).rev() {
            let (a, b) = (self.up[k][u], self.up[k][v]);
            if a != b {
                u = a as usize;
                v = b as usize;
            }
        }
        self.parent[u]
    }

    /// Path length as a numerator over the common denominator.
    pub fn path_len_num(&self, u: usize, v: usize) -> i128 {
        self.depth[u] + self.depth[v] - 2 * self.depth[self.lca(u, v)]
    }

    pub fn denominator(&self) -> i128 {
        self.denom
    }

    pub fn path_length(&self, u: usize, v: usize) -> Rational {
        Rational::new(self.path_len_num(u, v), self.denom)
    }

    /// The metric of the tree: path length or straight-line distance.
    pub fn dist(&self, u: usize, v: usize) -> Dist {
        match self.mode {
            MetricMode::Geodesic => Dist::from_len(self.path_length(u, v)),
            MetricMode::Euclidean => {
                let p = self.positions.as_ref().expect("euclidean positions");
                Dist::from_sq(p[u].dist_sq(&p[v]))
            }
        }
    }

    pub fn dist_f64(&self, u: usize, v: usize) -> f64 {
        match self.mode {
            MetricMode::Geodesic => self.path_len_num(u, v) as f64 / self.denom as f64,
            MetricMode::Euclidean => {
                let p = self.positions.as_ref().expect("euclidean positions");
                p[u].dist_f64(&p[v])
            }
        }
    }

    /// Vertices of the arc from `u` to `v`, in order.
    pub fn path(&self, u: usize, v: usize) -> Vec<usize> {
        let w = self.lca(u, v);
        let mut left = vec![u];
        let mut x = u;
        while x != w {
            x = self.parent[x];
            left.push(x);
        }
        let mut right = Vec::new();
        let mut y = v;
        while y != w {
            right.push(y);
            y = self.parent[y];
        }
        left.extend(right.into_iter().rev());
        left
    }

    /// Diameter of a vertex set; the path metric of a connected set uses two sweeps.
    fn set_diameter(&self, verts: &[usize], connected: bool) -> Dist {
        if verts.len() < 2 {
            return Dist::zero();
        }
        match (self.mode, connected) {
            (MetricMode::Geodesic, true) => {
                let far = |s: usize| {
                    verts
                        .iter()
                        .copied()
                        .max_by_key(|&v| (self.path_len_num(s, v), std::cmp::Reverse(v)))
                        .unwrap()
                };
                let a = far(verts[0]);
                let b = far(a);
                self.dist(a, b)
            }
            _ => {
                let mut best = Dist::zero();
                for (i, &a) in verts.iter().enumerate() {
                    for &b in &verts[i + 1..] {
                        best = best.max(self.dist(a, b));
                    }
                }
                best
            }
        }
    }

    pub fn diameter(&self) -> Dist {
        let all: Vec<usize> = (0..self.vertex_count()).collect();
        self.set_diameter(&all, true)
    }

    /// Replaces interior points by vertices. Returns the refined tree and the
    /// vertex standing for each input point. Original ids are preserved.
    pub fn subdivide(
        &self,
        points: &[TreePoint],
    ) -> Result<(SimplicialMetricTree, Vec<usize>), TreeError> {
        let n = self.vertex_count();
        let mut per_edge: Vec<Vec<Rational>> = vec![Vec::new(); self.edge_count()];
        for p in points {
            match p {
                TreePoint::Vertex(v) if *v >= n => return Err(TreeError::UnknownVertex(*v)),
                TreePoint::Vertex(_) => {}
                TreePoint::Interior { edge, t } => {
                    if *edge >= self.edge_count() {
                        return Err(TreeError::UnknownEdge(*edge));
                    }
                    if !t.is_positive() || *t >= Rational::one() {
                        return Err(TreeError::BadParameter);
                    }
                    per_edge[*edge].push(*t);
                }
            }
        }
        if per_edge.iter().all(Vec::is_empty) {
            let ids = points
                .iter()
                .map(|p| {
                    if let TreePoint::Vertex(v) = p {
                        *v
                    } else {
                        unreachable!()
                    }
                })
                .collect();
            return Ok((self.clone(), ids));
        }
        let mut edges = Vec::new();
        let mut positions = self.positions.clone();
        let mut next = n;
        let mut new_id: Vec<Vec<(Rational, usize)>> = vec![Vec::new(); self.edge_count()];
        for e in 0..self.edge_count() {
            let (u, v) = self.edges[e];
            let l = self.edge_length(e);
            let mut ts = per_edge[e].clone();
            ts.sort();
            ts.dedup();
            let mut prev = (u, Rational::zero());
            for t in ts {
                if let Some(pos) = positions.as_mut() {
                    let (pu, pv) = (pos[u], pos[v]);
                    let dx = (pv.re() - pu.re()) * t;
                    let dy = (pv.im() - pu.im()) * t;
                    let p = DyadicPoint::from_rationals(&(pu.re() + dx), &(pu.im() + dy))
                        .ok_or(TreeError::NonDyadicSubdivision)?;
                    pos.push(p);
                }
                edges.push((prev.0, next, l * (t - prev.1)));
                new_id[e].push((t, next));
                prev = (next, t);
                next += 1;
            }
            edges.push((prev.0, v, l * (Rational::one() - prev.1)));
        }
        let mut t =
            SimplicialMetricTree::new(self.mode, next, edges, positions, self.marks.clone())?;
        t.truncation = self.truncation;
        let ids = points
            .iter()
            .map(|p| match p {
                TreePoint::Vertex(v) => *v,
                TreePoint::Interior { edge, t } => {
                    new_id[*edge].iter().find(|(s, _)| s == t).unwrap().1
                }
            })
            .collect();
        Ok((t, ids))
    }

    /// The arc `[x, y]` with its length and diameter.
    pub fn arc(&self, x: &TreePoint, y: &TreePoint) -> Result<ArcInfo, TreeError> {
        let (t, ids) = self.subdivide(&[x.clone(), y.clone()])?;
        let n = self.vertex_count();
        let path = t.path(ids[0], ids[1]);
        let diameter = t.set_diameter(&path, true);
        let points = path
            .iter()
            .map(|&v| {
                if v < n {
                    TreePoint::Vertex(v)
                } else if v == ids[0] {
                    x.clone()
                } else {
                    y.clone()
                }
            })
            .collect();
        Ok(ArcInfo {
            points,
            length: t.path_length(ids[0], ids[1]),
            diameter,
        })
    }

    /// For every vertex, the diameters of its branches keyed by neighbour.
    pub fn arm_diameters(&self) -> Vec<Vec<(usize, Dist)>> {
        match self.mode {
            MetricMode::Geodesic => self.arm_diameters_geodesic(),
            MetricMode::Euclidean => self.arm_diameters_brute(),
        }
    }

    fn arm_diameters_geodesic(&self) -> Vec<Vec<(usize, Dist)>> {
        let n = self.vertex_count();
        let elen = |a: usize, b: usize| {
            self.adj[a]
                .iter()
                .find(|x| x.0 == b)
                .map(|x| self.len[x.1])
                .unwrap()
        };
        let mut down_h = vec![0i128; n];
        let mut down_d = vec![0i128; n];
        for &v in self.order.iter().rev() {
            let (mut h1, mut h2, mut d) = (0i128, 0i128, 0i128);
            for &(c, e) in &self.adj[v] {
                if c == self.parent[v] && v != 0 {
                    continue;
                }
                let h = self.len[e] + down_h[c];
                d = d.max(down_d[c]);
                if h > h1 {
                    h2 = h1;
                    h1 = h;
                } else if h > h2 {
                    h2 = h;
                }
            }
            down_h[v] = h1;
            down_d[v] = d.max(h1 + h2);
        }
        // arm of v towards its parent: (height from v, diameter)
        let mut up_arm = vec![(0i128, 0i128); n];
        let mut arms: Vec<Vec<(usize, i128, i128)>> = vec![Vec::new(); n];
        for &p in &self.order {
            let mut list: Vec<(usize, i128, i128)> = Vec::with_capacity(self.adj[p].len());
            for &(c, e) in &self.adj[p] {
                if p != 0 && c == self.parent[p] {
                    list.push((c, up_arm[p].0, up_arm[p].1));
                } else {
                    let h = self.len[e] + down_h[c];
                    list.push((c, h, down_d[c].max(h)));
                }
            }
            let mut by_h: Vec<usize> = (0..list.len()).collect();
            by_h.sort_by_key(|&i| std::cmp::Reverse(list[i].1));
            let mut by_d: Vec<usize> = (0..list.len()).collect();
            by_d.sort_by_key(|&i| std::cmp::Reverse(list[i].2));
            for (i, &(c, _, _)) in list.iter().enumerate() {
                if p != 0 && c == self.parent[p] {
                    continue;
                }
                let hs: Vec<i128> = by_h
                    .iter()
                    .filter(|&&j| j != i)
                    .take(2)
                    .map(|&j| list[j].1)
                    .collect();
                let dmax = by_d
                    .iter()
                    .find(|&&j| j != i)
                    .map(|&j| list[j].2)
                    .unwrap_or(0);
                let ecc = hs.first().copied().unwrap_or(0);
                let diam_rest = dmax.max(hs.iter().sum());
                let l = elen(p, c);
                up_arm[c] = (l + ecc, diam_rest.max(l + ecc));
            }
            arms[p] = list;
        }
        arms.into_iter()
            .map(|list| {
                list.into_iter()
                    .map(|(c, _, d)| (c, Dist::from_len(Rational::new(d, self.denom))))
                    .collect()
            })
            .collect()
    }

    fn arm_diameters_brute(&self) -> Vec<Vec<(usize, Dist)>> {
        let n = self.vertex_count();
        let out: Vec<Vec<(usize, Dist)>> = par_iter!(0..n)
            .map(|p| {
                self.adj[p]
                    .iter()
                    .map(|&(c, _)| {
                        let mut comp = self.component_without(p, c);
                        comp.push(p);
                        (c, self.set_diameter(&comp, true))
                    })
                    .collect()
            })
            .collect();
        out
    }

    /// Vertices of the component of `T \ {p}` containing the neighbour `c`.
    pub fn component_without(&self, p: usize, c: usize) -> Vec<usize> {
        let mut seen = vec![c];
        let mut stack = vec![(c, p)];
        while let Some((v, from)) = stack.pop() {
            for &(w, _) in &self.adj[v] {
                if w != from && w != p {
                    seen.push(w);
                    stack.push((w, v));
                }
            }
        }
        seen
    }

    /// Height of every vertex: the third largest branch diameter (zero below degree 3).
    pub fn heights(&self) -> Vec<Dist> {
        self.arm_diameters()
            .into_iter()
            .map(|arms| height_of(&arms))
            .collect()
    }

    /// Branch diameters at `p`, largest first, and the height of `p`.
    pub fn branches_and_height(&self, p: &TreePoint) -> Result<BranchReport, TreeError> {
        let (t, ids) = self.subdivide(std::slice::from_ref(p))?;
        let v = ids[0];
        let mut arms = if t.mode == MetricMode::Geodesic {
            t.arm_diameters_geodesic().swap_remove(v)
        } else {
            t.adj[v]
                .iter()
                .map(|&(c, _)| {
                    let mut comp = t.component_without(v, c);
                    comp.push(v);
                    (c, t.set_diameter(&comp, true))
                })
                .collect()
        };
        arms.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let height = height_of(&arms);
        Ok(BranchReport {
            branches: arms,
            height,
        })
    }

    /// Components of `T \ cut` as tiles; cut points must be non-leaf vertices.
    pub fn decompose(&self, cut: &[usize]) -> Result<Decomposition, TreeError> {
        let n = self.vertex_count();
        let mut is_cut = vec![false; n];
        for &v in cut {
            if v >= n {
                return Err(TreeError::UnknownVertex(v));
            }
            if self.is_leaf(v) {
                return Err(TreeError::LeafInCutSet(v));
            }
            is_cut[v] = true;
        }
        let mut uf = UnionFind::<usize>::new(self.edge_count());
        for v in 0..n {
            if is_cut[v] {
                continue;
            }
            if let Some(&(_, e0)) = self.adj[v].first() {
                for &(_, e) in &self.adj[v][1..] {
                    uf.union(e0, e);
                }
            }
        }
        let labels = uf.into_labeling();
        let mut root_tile = vec![usize::MAX; self.edge_count()];
        let mut tiles: Vec<Tile> = Vec::new();
        let mut edge_tile = vec![0; self.edge_count()];
        for e in 0..self.edge_count() {
            let r = labels[e];
            if root_tile[r] == usize::MAX {
                root_tile[r] = tiles.len();
                tiles.push(Tile::default());
            }
            edge_tile[e] = root_tile[r];
            tiles[root_tile[r]].edges.push(e);
        }
        for t in tiles.iter_mut() {
            let mut vs: Vec<usize> = t
                .edges
                .iter()
                .flat_map(|&e| [self.edges[e].0, self.edges[e].1])
                .collect();
            vs.sort_unstable();
            vs.dedup();
            t.boundary = vs.iter().copied().filter(|&v| is_cut[v]).collect();
            t.vertices = vs;
        }
        let mut cut = cut.to_vec();
        cut.sort_unstable();
        cut.dedup();
        Ok(Decomposition {
            cut,
            tiles,
            edge_tile,
        })
    }

    /// Refines `coarse` by a superset cut set and records the nesting.
    pub fn refine(
        &self,
        coarse: &Decomposition,
        fine_cut: &[usize],
    ) -> Result<Refinement, TreeError> {
        let mut sorted = fine_cut.to_vec();
        sorted.sort_unstable();
        for v in &coarse.cut {
            if sorted.binary_search(v).is_err() {
                return Err(TreeError::NotASuperset(*v));
            }
        }
        let fine = self.decompose(fine_cut)?;
        let parent: Vec<usize> = fine
            .tiles
            .iter()
            .map(|t| coarse.edge_tile[t.edges[0]])
            .collect();
        let mut children = vec![Vec::new(); coarse.tiles.len()];
        for (i, &p) in parent.iter().enumerate() {
            children[p].push(i);
        }
        let relative_boundary = fine
            .tiles
            .iter()
            .map(|t| {
                t.boundary
                    .iter()
                    .copied()
                    .filter(|v| coarse.cut.binary_search(v).is_err())
                    .collect()
            })
            .collect();
        Ok(Refinement {
            fine,
            parent,
            children,
            relative_boundary,
        })
    }

    /// The common point of `[x,y]`, `[y,z]`, `[z,x]` for vertices.
    pub fn center_vertex(&self, x: usize, y: usize, z: usize) -> usize {
        let c = [self.lca(x, y), self.lca(y, z), self.lca(x, z)];
        *c.iter()
            .max_by_key(|&&v| (self.hops[v], std::cmp::Reverse(v)))
            .unwrap()
    }

    /// Center of three points; for three branch points also the height bound
    /// `H(c) ≥ min(H(x), H(y), H(z))`.
    pub fn center(
        &self,
        x: &TreePoint,
        y: &TreePoint,
        z: &TreePoint,
    ) -> Result<CenterReport, TreeError> {
        let (t, ids) = self.subdivide(&[x.clone(), y.clone(), z.clone()])?;
        let c = t.center_vertex(ids[0], ids[1], ids[2]);
        let center = if c < self.vertex_count() {
            TreePoint::Vertex(c)
        } else {
            [x, y, z][ids.iter().position(|&i| i == c).unwrap()].clone()
        };
        let height_bound = if ids.iter().all(|&v| t.is_branch_point(v)) {
            let h = t.heights();
            let lower = ids.iter().map(|&v| h[v]).min().unwrap();
            Some((h[c], lower))
        } else {
            None
        };
        Ok(CenterReport {
            center,
            height_bound,
        })
    }

    pub fn tile_diameter(&self, tile: &Tile) -> Dist {
        self.set_diameter(&tile.vertices, true)
    }

    /// Distance between two vertex sets spanning disjoint subtrees.
    pub fn subtree_distance(&self, a: &Tile, b: &Tile) -> Dist {
        match self.mode {
            MetricMode::Geodesic => {
                let path = self.path(a.vertices[0], b.vertices[0]);
                let last_a = path.iter().rposition(|v| a.contains(*v)).unwrap();
                let first_b = path.iter().position(|v| b.contains(*v)).unwrap();
                if first_b <= last_a {
                    return Dist::zero();
                }
                self.dist(path[last_a], path[first_b])
            }
            MetricMode::Euclidean => {
                let mut best: Option<Dist> = None;
                for &u in &a.vertices {
                    for &v in &b.vertices {
                        let d = self.dist(u, v);
                        best = Some(best.map_or(d, |x| x.min(d)));
                    }
                }
                best.unwrap_or_else(Dist::zero)
            }
        }
    }

    /// Estimates the bounded-turning, doubling, separation and density constants.
    pub fn geometric_constants(&self, pair_budget: usize, seed: u64) -> ConstantsReport {
        let n = self.vertex_count();
        let heights = self.heights();
        let pairs = sample_pairs(&(0..n).collect::<Vec<_>>(), pair_budget, seed);
        let exhaustive_all = pairs.len() == n * (n - 1) / 2;

        let bt = par_iter!(pairs.clone())
            .map(|(x, y)| {
                let path = self.path(x, y);
                let d = self.set_diameter(&path, true);
                (d.sq() / self.dist(x, y).sq(), x, y)
            })
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(r, x, y)| Estimate::from_sq(r, pairs.len(), exhaustive_all, Some((x, y))));

        let branch = self.branch_points();
        let bp_pairs = sample_pairs(&branch, pair_budget, seed ^ 0x5eed);
        let separation = par_iter!(bp_pairs.clone())
            .map(|(p, q)| {
                let h = heights[p].min(heights[q]);
                (self.dist(p, q).sq() / h.sq(), p, q)
            })
            .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(r, p, q)| {
                let full = branch.len() * branch.len().saturating_sub(1) / 2;
                Estimate::from_sq(r, bp_pairs.len(), bp_pairs.len() == full, Some((p, q)))
            });

        let essential: Vec<usize> = (0..n).filter(|&v| self.degree(v) != 2).collect();
        let ess_pairs = sample_pairs(&essential, pair_budget, seed ^ 0xde75);
        let density = if branch.is_empty() {
            None
        } else {
            par_iter!(ess_pairs.clone())
                .map(|(x, y)| {
                    let path = self.path(x, y);
                    let d = self.set_diameter(&path, true);
                    let best = path
                        .iter()
                        .filter(|&&z| self.is_branch_point(z))
                        .map(|&z| heights[z])
                        .max()
                        .unwrap_or_else(Dist::zero);
                    (best.sq() / d.sq(), x, y)
                })
                .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(r, x, y)| {
                    let full = essential.len() * essential.len().saturating_sub(1) / 2;
                    Estimate::from_sq(r, ess_pairs.len(), ess_pairs.len() == full, Some((x, y)))
                })
        };

        ConstantsReport {
            bounded_turning: bt,
            doubling: self.doubling_estimate(seed),
            separation,
            density,
        }
    }

    /// Greedy half-radius covers of sampled balls; ties go to the lowest vertex id.
    fn doubling_estimate(&self, seed: u64) -> Option<Estimate> {
        const CENTERS: usize = 24;
        const BALL_CAP: usize = 1500;
        let n = self.vertex_count();
        let diam = self.diameter().to_f64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers: Vec<usize> = (0..n).collect();
        centers.shuffle(&mut rng);
        centers.truncate(CENTERS);
        centers.sort_unstable();
        let mut exhaustive = n <= CENTERS;
        let mut worst = 0usize;
        let mut balls = 0usize;
        for &c in &centers {
            for j in 1..=4 {
                let r = diam / f64::from(1u32 << j);
                let mut ball: Vec<usize> = (0..n).filter(|&v| self.dist_f64(c, v) <= r).collect();
                if ball.len() > BALL_CAP {
                    ball.truncate(BALL_CAP);
                    exhaustive = false;
                }
                let mut covered = vec![false; ball.len()];
                let mut count = 0;
                for i in 0..ball.len() {
                    if covered[i] {
                        continue;
                    }
                    count += 1;
                    for k in i..ball.len() {
                        if !covered[k] && self.dist_f64(ball[i], ball[k]) <= r / 2.0 {
                            covered[k] = true;
                        }
                    }
                }
                worst = worst.max(count);
                balls += 1;
            }
        }
        (balls > 0).then_some(Estimate {
            value: worst as f64,
            exact_sq: None,
            samples: balls,
            exhaustive,
            witness: None,
        })
    }
}

fn height_of(arms: &[(usize, Dist)]) -> Dist {
    if arms.len() < 3 {
        return Dist::zero();
    }
    let mut d: Vec<Dist> = arms.iter().map(|a| a.1).collect();
    d.sort_unstable_by(|a, b| b.cmp(a));
    d[2]
}

/// All unordered pairs of `items` if they fit in `budget`, else a seeded sample.
pub fn sample_pairs(items: &[usize], budget: usize, seed: u64) -> Vec<(usize, usize)> {
    let m = items.len();
    let full = m * m.saturating_sub(1) / 2;
    if full <= budget {
        let mut out = Vec::with_capacity(full);
        for i in 0..m {
            for j in i + 1..m {
                out.push((items[i], items[j]));
            }
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..budget)
        .map(|_| {
            let i = rng.gen_range(0..m);
            let mut j = rng.gen_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            (items[i.min(j)], items[i.max(j)])
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ArcInfo {
    pub points: Vec<TreePoint>,
    pub length: Rational,
    pub diameter: Dist,
}

#[derive(Clone, Debug)]
pub struct BranchReport {
    /// `(neighbour, diameter)`, largest diameter first.
    pub branches: Vec<(usize, Dist)>,
    pub height: Dist,
}

#[derive(Clone, Debug)]
pub struct CenterReport {
    pub center: TreePoint,
    /// `(H(c), min of the three heights)` when all three points are branch points.
    pub height_bound: Option<(Dist, Dist)>,
}

/// One component of `T \ 𝒱`, closed up.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub edges: Vec<usize>,
    #[serde(skip)]
    pub vertices: Vec<usize>,
    pub boundary: Vec<usize>,
}

impl Tile {
    pub fn contains(&self, v: usize) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }
    pub fn is_leaf_tile(&self) -> bool {
        self.boundary.len() == 1
    }
    pub fn is_edge_tile(&self) -> bool {
        self.boundary.len() == 2
    }
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub cut: Vec<usize>,
    pub tiles: Vec<Tile>,
    pub edge_tile: Vec<usize>,
}

impl Decomposition {
    /// Tiles containing the vertex `v`, ascending.
    pub fn tiles_of_vertex(&self, tree: &SimplicialMetricTree, v: usize) -> Vec<usize> {
        let mut t: Vec<usize> = tree
            .neighbors(v)
            .iter()
            .map(|&(_, e)| self.edge_tile[e])
            .collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    pub fn is_edge_like(&self) -> bool {
        self.tiles.iter().all(|t| t.boundary.len() <= 2)
    }

    /// Number of tiles containing a cut point, i.e. its degree.
    pub fn multiplicity(&self, tree: &SimplicialMetricTree, v: usize) -> usize {
        self.tiles_of_vertex(tree, v).len()
    }
}

#[derive(Clone, Debug)]
pub struct Refinement {
    pub fine: Decomposition,
    /// Coarse tile containing each fine tile.
    pub parent: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    /// `∂_X X' = ∂X' \ 𝒱` for each fine tile.
    pub relative_boundary: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimate {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", with = "opt_rational")]
    pub exact_sq: Option<Rational>,
    pub samples: usize,
    pub exhaustive: bool,
    pub witness: Option<(usize, usize)>,
}

impl Estimate {
    fn from_sq(
        sq: Rational,
        samples: usize,
        exhaustive: bool,
        witness: Option<(usize, usize)>,
    ) -> Self {
        Estimate {
            value: to_f64(&sq).sqrt(),
            exact_sq: Some(sq),
            samples,
            exhaustive,
            witness,
        }
    }
}

mod opt_rational {
    use serde::Serializer;

    use crate::Rational;

    pub fn serialize<S: Serializer>(r: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => crate::serde_rational::serialize(r, s),
            None => s.serialize_none(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantsReport {
    pub bounded_turning: Option<Estimate>,
    pub doubling: Option<Estimate>,
    pub separation: Option<Estimate>,
    pub density: Option<Estimate>,
}
