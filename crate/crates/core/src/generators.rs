//! Input trees: CSST approximants, perturbations, random trivalent trees and
//! discretized Brownian CRT samples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csst::{build_jn, CsstError};
use crate::tree::{MetricMode, SimplicialMetricTree, TreeError};
use crate::Rational;

/// Precision of CRT edge lengths: heights are rounded to multiples of `2^-20`.
pub const CRT_PRECISION_BITS: u32 = 20;

/// Largest `n` accepted for `J_n`-based models.
pub const MAX_JN_LEVEL: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("not an excursion: {0}")]
    NotAnExcursion(String),
    #[error("quotient is a single point")]
    Degenerate,
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Csst(#[from] CsstError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Jn(usize),
    /// Edge lengths of `J_n` multiplied by independent factors in `[lo, hi]`.
    Perturbed {
        n: usize,
        lo: Rational,
        hi: Rational,
        seed: u64,
    },
    /// `size` branch points, all of degree 3.
    RandomTrivalent {
        size: usize,
        seed: u64,
    },
}

pub fn make_model(kind: &ModelKind) -> Result<SimplicialMetricTree, GeneratorError> {
    match kind {
        ModelKind::Jn(n) => {
            check_level(*n)?;
            Ok(build_jn(*n).tree)
        }
        ModelKind::Perturbed { n, lo, hi, seed } => {
            check_level(*n)?;
            perturbed(*n, *lo, *hi, *seed)
        }
        ModelKind::RandomTrivalent { size, seed } => random_trivalent(*size, *seed),
    }
}

fn check_level(n: usize) -> Result<(), GeneratorError> {
    if n > MAX_JN_LEVEL {
        return Err(CsstError::BudgetExceeded {
            needed: 3u64.pow(n as u32),
            budget: 3u64.pow(MAX_JN_LEVEL as u32),
        }
        .into());
    }
    Ok(())
}

/// Factors are drawn from the 17 equally spaced rationals of `[lo, hi]`.
fn perturbed(
    n: usize,
    lo: Rational,
    hi: Rational,
    seed: u64,
) -> Result<SimplicialMetricTree, GeneratorError> {
    let one = Rational::from_integer(1);
    if lo <= Rational::from_integer(0) || hi < lo {
        return Err(GeneratorError::BadParameter(
            "factor range must satisfy 0 < lo <= hi".into(),
        ));
    }
    let base = build_jn(n).tree;
    if lo == one && hi == one {
        return Ok(base);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = (0..base.edge_count())
        .map(|e| {
            let (u, v) = base.edge(e);
            let k = rng.gen_range(0..=16i128);
            (
                u,
                v,
                base.edge_length(e) * (lo + (hi - lo) * Rational::new(k, 16)),
            )
        })
        .collect();
    Ok(SimplicialMetricTree::new(
        MetricMode::Geodesic,
        base.vertex_count(),
        edges,
        None,
        vec![],
    )?)
}

/// Grows a tripod by repeatedly splitting a random edge and sprouting a leaf
/// at the new vertex. Lengths are integers in `1..=8`.
fn random_trivalent(size: usize, seed: u64) -> Result<SimplicialMetricTree, GeneratorError> {
    if size == 0 {
        return Err(GeneratorError::BadParameter(
            "need at least one branch point".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = |rng: &mut ChaCha8Rng| Rational::from_integer(rng.gen_range(1..=8));
    let mut edges: Vec<(usize, usize, Rational)> =
        (1..=3).map(|leaf| (0, leaf, len(&mut rng))).collect();
    let mut n = 4;
    for _ in 1..size {
        let e = rng.gen_range(0..edges.len());
        let (u, v, _) = edges[e];
        let (m, w) = (n, n + 1);
        n += 2;
        edges[e] = (u, m, len(&mut rng));
        edges.push((m, v, len(&mut rng)));
        edges.push((m, w, len(&mut rng)));
    }
    Ok(SimplicialMetricTree::new(
        MetricMode::Geodesic,
        n,
        edges,
        None,
        vec![],
    )?)
}

/// `e(j/m)` for `j = 0..=m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcursionSample {
    pub resolution: usize,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl ExcursionSample {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let v = &self.values;
        if self.resolution == 0 || v.len() != self.resolution + 1 {
            return Err(GeneratorError::NotAnExcursion(format!(
                "{} values for resolution {}",
                v.len(),
                self.resolution
            )));
        }
        if v[0] != 0.0 || v[self.resolution] != 0.0 {
            return Err(GeneratorError::NotAnExcursion("endpoints must be 0".into()));
        }
        if let Some(j) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(GeneratorError::NotAnExcursion(format!(
                "e(t_{j}) is negative or not finite"
            )));
        }
        Ok(())
    }

    /// Values rounded to multiples of `2^-20`.
    pub fn grid_heights(&self) -> Vec<i64> {
        let s = f64::from(1u32 << CRT_PRECISION_BITS);
        self.values.iter().map(|x| (x * s).round() as i64).collect()
    }
}

/// A ±1 bridge with `m/2` up-steps, cyclically shifted to start at its first
/// minimum and scaled by `m^{-1/2}`.
pub fn brownian_excursion(m: usize, seed: u64) -> Result<ExcursionSample, GeneratorError> {
    if m < 2 || !m.is_power_of_two() {
        return Err(GeneratorError::BadParameter(format!(
            "resolution {m} is not a power of two >= 2"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps: Vec<i64> = (0..m).map(|j| if j < m / 2 { 1 } else { -1 }).collect();
    steps.shuffle(&mut rng);
    let mut walk = vec![0i64; m + 1];
    for j in 0..m {
        walk[j + 1] = walk[j] + steps[j];
    }
    let tau = (0..m).min_by_key(|&j| (walk[j], j)).unwrap();
    let scale = (m as f64).sqrt();
    let values = (0..=m)
        .map(|j| (walk[(tau + j) % m] - walk[tau]) as f64 / scale)
        .collect();
    Ok(ExcursionSample {
        resolution: m,
        seed,
        values,
    })
}

/// `d_e(s, t)` on the grid, in units of `2^-20`.
pub fn pseudo_distance(h: &[i64], s: usize, t: usize) -> i64 {
    let (a, b) = (s.min(t), s.max(t));
    let low = h[a..=b].iter().copied().min().unwrap();
    h[s] + h[t] - 2 * low
}

#[derive(Clone, Debug)]
pub struct CrtTree {
    pub tree: SimplicialMetricTree,
    /// A grid index represented by each vertex.
    pub representative: Vec<usize>,
    /// Vertex of the class of each grid point, when that class survived contraction.
    pub class_vertex: Vec<Option<usize>>,
}

/// Quotient of the grid by `d_e = 0`, degree-2 chains contracted, edges of
/// length `≤ eps` merged.
pub fn crt_quotient(sample: &ExcursionSample, eps: Rational) -> Result<CrtTree, GeneratorError> {
    sample.validate()?;
    if eps < Rational::from_integer(0) {
        return Err(GeneratorError::BadParameter(
            "eps must be non-negative".into(),
        ));
    }
    let h = sample.grid_heights();
    let m = h.len();
    // class tree on grid points: parent pointers to a lower class
    let mut class = vec![0usize; m];
    let mut parent: Vec<usize> = Vec::new();
    let mut height: Vec<i64> = Vec::new();
    let mut rep: Vec<usize> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for j in 0..m {
        let mut last = None;
        while let Some(&top) = stack.last() {
            if height[top] > h[j] {
                last = stack.pop();
            } else {
                break;
            }
        }
        match stack.last() {
            Some(&top) if height[top] == h[j] => class[j] = top,
            _ => {
                let c = parent.len();
                parent.push(stack.last().copied().unwrap_or(usize::MAX));
                height.push(h[j]);
                rep.push(j);
                if let Some(l) = last {
                    parent[l] = c;
                }
                stack.push(c);
                class[j] = c;
            }
        }
    }
    let k = parent.len();
    if k < 2 {
        return Err(GeneratorError::Degenerate);
    }
    let eps_units = eps * Rational::from_integer(1i128 << CRT_PRECISION_BITS);
    // merge short edges: a class joins its parent's group
    let mut group: Vec<usize> = (0..k).collect();
    let order = topo_order(&parent);
    for &c in &order {
        if parent[c] != usize::MAX
            && Rational::from_integer((height[c] - height[parent[c]]) as i128) <= eps_units
        {
            group[c] = group[parent[c]];
        }
    }
    let mut degree = vec![0usize; k];
    for c in 0..k {
        let p = parent[c];
        if p != usize::MAX && group[c] != group[p] {
            degree[group[c]] += 1;
            degree[group[p]] += 1;
        }
    }
    let keep: Vec<bool> = (0..k)
        .map(|c| group[c] == c && degree[c] > 0 && (degree[c] != 2 || parent[c] == usize::MAX))
        .collect();
    let mut vertex = vec![usize::MAX; k];
    let mut representative = Vec::new();
    for c in 0..k {
        if keep[c] {
            vertex[c] = representative.len();
            representative.push(rep[c]);
        }
    }
    if representative.len() < 2 {
        return Err(GeneratorError::Degenerate);
    }
    // nearest kept ancestor group of each kept vertex
    let mut edges = Vec::new();
    let mut up = vec![usize::MAX; k];
    for &c in &order {
        let g = group[c];
        let p = parent[c];
        if p == usize::MAX {
            continue;
        }
        let pg = group[p];
        let anchor = if keep[pg] { pg } else { up[pg] };
        if g == c && pg != g {
            if keep[c] {
                if anchor != usize::MAX {
                    let l = height[c] - height[anchor];
                    edges.push((
                        vertex[anchor],
                        vertex[c],
                        Rational::new(l as i128, 1i128 << CRT_PRECISION_BITS),
                    ));
                }
                up[c] = c;
            } else {
                up[c] = anchor;
            }
        }
    }
    let n = representative.len();
    let tree = SimplicialMetricTree::new(MetricMode::Geodesic, n, edges, None, vec![])?;
    let class_vertex = class
        .iter()
        .map(|&c| (vertex[group[c]] != usize::MAX).then(|| vertex[group[c]]))
        .collect();
    Ok(CrtTree {
        tree,
        representative,
        class_vertex,
    })
}

/// Classes ordered so parents precede children.
fn topo_order(parent: &[usize]) -> Vec<usize> {
    let k = parent.len();
    let mut children = vec![Vec::new(); k];
    let mut roots = Vec::new();
    for c in 0..k {
        if parent[c] == usize::MAX {
            roots.push(c);
        } else {
            children[parent[c]].push(c);
        }
    }
    let mut order = Vec::with_capacity(k);
    let mut stack = roots;
    while let Some(c) = stack.pop() {
        order.push(c);
        stack.extend(children[c].iter().copied());
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tent(m: usize) -> ExcursionSample {
        let values = (0..=m)
            .map(|j| 2.0 * (j.min(m - j) as f64) / m as f64)
            .collect();
        ExcursionSample {
            resolution: m,
            seed: 0,
            values,
        }
    }

    #[test]
    fn tent_is_a_segment() {
        let s = tent(16);
        let h = s.grid_heights();
        assert_eq!(pseudo_distance(&h, 0, 8), 1 << CRT_PRECISION_BITS);
        let q = crt_quotient(&s, Rational::from_integer(0)).unwrap();
        assert_eq!(q.tree.vertex_count(), 2);
        assert_eq!(q.tree.path_length(0, 1), Rational::from_integer(1));
    }

    #[test]
    fn zero_excursion_is_degenerate() {
        let s = ExcursionSample {
            resolution: 4,
            seed: 0,
            values: vec![0.0; 5],
        };
        assert_eq!(
            crt_quotient(&s, Rational::from_integer(0)).unwrap_err(),
            GeneratorError::Degenerate
        );
    }

    #[test]
    fn rejects_non_excursions() {
        let s = ExcursionSample {
            resolution: 2,
            seed: 0,
            values: vec![0.0, -1.0, 0.0],
        };
        assert!(matches!(
            s.validate(),
            Err(GeneratorError::NotAnExcursion(_))
        ));
        let s = ExcursionSample {
            resolution: 2,
            seed: 0,
            values: vec![0.5, 1.0, 0.0],
        };
        assert!(matches!(
            s.validate(),
            Err(GeneratorError::NotAnExcursion(_))
        ));
    }

    #[test]
    fn excursion_invariants() {
        for seed in 0..10 {
            let e = brownian_excursion(64, seed).unwrap();
            e.validate().unwrap();
            assert_eq!(e, brownian_excursion(64, seed).unwrap());
        }
        assert!(brownian_excursion(48, 0).is_err());
    }

    #[test]
    fn quotient_matches_pseudo_distance() {
        for seed in 0..5 {
            let e = brownian_excursion(64, seed).unwrap();
            let h = e.grid_heights();
            let q = crt_quotient(&e, Rational::from_integer(0)).unwrap();
            let unit = Rational::new(1, 1i128 << CRT_PRECISION_BITS);
            let r = &q.representative;
            for a in 0..r.len() {
                for b in 0..r.len() {
                    let d = Rational::from_integer(pseudo_distance(&h, r[a], r[b]) as i128) * unit;
                    assert_eq!(q.tree.path_length(a, b), d);
                }
            }
        }
    }

    #[test]
    fn random_trivalent_counts() {
        for (size, seed) in [(1, 0), (7, 3), (40, 9)] {
            let t = make_model(&ModelKind::RandomTrivalent { size, seed }).unwrap();
            let bp = t.branch_points();
            assert_eq!(bp.len(), size);
            assert!(bp.iter().all(|&v| t.degree(v) == 3));
        }
    }

    #[test]
    fn perturbed_identity() {
        let one = Rational::from_integer(1);
        let a = make_model(&ModelKind::Perturbed {
            n: 3,
            lo: one,
            hi: one,
            seed: 5,
        })
        .unwrap();
        let b = make_model(&ModelKind::Jn(3)).unwrap();
        assert_eq!(a.edge_count(), b.edge_count());
        for e in 0..a.edge_count() {
            assert_eq!(a.edge(e), b.edge(e));
            assert_eq!(a.edge_length(e), b.edge_length(e));
        }
    }
}
