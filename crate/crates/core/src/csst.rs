//! The continuum self-similar tree: its three similarities, word-addressed
//! tiles, branch points, exact metrics and the finite models `J_n`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{pow2, to_f64, DyadicPoint};
#[cfg(feature = "parallel")]
use crate::par::prelude::*;
use crate::par_iter;
use crate::tree::{MetricMode, SimplicialMetricTree, Tile, TreeError};
use crate::Rational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CsstError {
    #[error("enumeration needs {needed} words, budget is {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },
    #[error("tile {tile} does not match any word tile")]
    NotWordAddressed { tile: usize },
    #[error("invalid word `{0}`: letters must be 1, 2 or 3")]
    InvalidWord(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A finite word over `{1, 2, 3}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn new(letters: Vec<u8>) -> Result<Self, CsstError> {
        if letters.iter().all(|c| (1..=3).contains(c)) {
            Ok(Word(letters))
        } else {
            Err(CsstError::InvalidWord(format!("{letters:?}")))
        }
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&self, k: u8) -> Word {
        let mut v = self.0.clone();
        v.push(k);
        Word(v)
    }

    pub fn concat(&self, o: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&o.0);
        Word(v)
    }

    pub fn is_prefix_of(&self, o: &Word) -> bool {
        o.0.starts_with(&self.0)
    }

    pub fn common_prefix_len(&self, o: &Word) -> usize {
        self.0.iter().zip(&o.0).take_while(|(a, b)| a == b).count()
    }

    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n].to_vec())
    }

    /// The `i`-th word of length `len` in lexicographic order.
    pub fn from_index(len: usize, mut i: u64) -> Word {
        let mut v = vec![1u8; len];
        for slot in v.iter_mut().rev() {
            *slot = 1 + (i % 3) as u8;
            i /= 3;
        }
        Word(v)
    }

    /// All words of length exactly `len`, lexicographically.
    pub fn all_of_len(len: usize) -> Vec<Word> {
        (0..3u64.pow(len as u32))
            .map(|i| Word::from_index(len, i))
            .collect()
    }

    /// All words of length at most `len`, by length then lexicographically.
    pub fn all_up_to(len: usize) -> Vec<Word> {
        (0..=len).flat_map(Word::all_of_len).collect()
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = CsstError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let letters: Option<Vec<u8>> = s
            .chars()
            .map(|c| match c {
                '1' => Some(1),
                '2' => Some(2),
                '3' => Some(3),
                _ => None,
            })
            .collect();
        letters
            .map(Word)
            .ok_or_else(|| CsstError::InvalidWord(s.to_string()))
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One of the three spine points `-1`, `0`, `1` of the unit tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Anchor {
    Minus,
    Zero,
    Plus,
}

impl Anchor {
    pub fn point(self) -> DyadicPoint {
        match self {
            Anchor::Minus => DyadicPoint::MINUS_ONE,
            Anchor::Zero => DyadicPoint::ZERO,
            Anchor::Plus => DyadicPoint::ONE,
        }
    }

    fn value(self) -> i128 {
        match self {
            Anchor::Minus => -1,
            Anchor::Zero => 0,
            Anchor::Plus => 1,
        }
    }

    pub fn opposite(self) -> Anchor {
        match self {
            Anchor::Minus => Anchor::Plus,
            Anchor::Zero => Anchor::Zero,
            Anchor::Plus => Anchor::Minus,
        }
    }
}

/// The point `g_word(anchor)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CsstPoint {
    pub word: Word,
    pub anchor: Anchor,
}

impl CsstPoint {
    pub fn new(word: Word, anchor: Anchor) -> Self {
        CsstPoint { word, anchor }
    }

    /// The branch point `g_word(0)`.
    pub fn branch(word: Word) -> Self {
        CsstPoint {
            word,
            anchor: Anchor::Zero,
        }
    }

    pub fn coords(&self) -> DyadicPoint {
        apply_word(&self.word, self.anchor.point())
    }
}

/// One similarity `g_k`.
pub fn apply_letter(k: u8, z: DyadicPoint) -> DyadicPoint {
    let half = DyadicPoint::ONE.half();
    match k {
        1 => z.half().sub(&half),
        2 => z.conj().half().add(&half),
        3 => z.conj().mul_i().half().add(&half.mul_i()),
        _ => panic!("letter {k} outside {{1,2,3}}"),
    }
}

/// `g_w(z) = g_{w_1} ∘ … ∘ g_{w_n}(z)`.
pub fn apply_word(w: &Word, z: DyadicPoint) -> DyadicPoint {
    w.letters()
        .iter()
        .rev()
        .fold(z, |acc, &k| apply_letter(k, acc))
}

/// Which of the two spine ends `g_w(-1)`, `g_w(1)` lie on the tile boundary.
pub fn boundary_ends(w: &Word) -> (bool, bool) {
    let mut minus = false;
    let mut plus = false;
    for &k in w.letters() {
        (minus, plus) = match k {
            1 => (minus, true),
            2 => (true, plus),
            _ => (true, false),
        };
    }
    (minus, plus)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileInfo {
    pub word: Word,
    #[serde(with = "crate::serde_rational")]
    pub diam: Rational,
    pub boundary: Vec<DyadicPoint>,
}

/// Diameter and boundary of the tile `𝒯_w`.
pub fn tile_info(w: &Word) -> TileInfo {
    let (minus, plus) = boundary_ends(w);
    let mut boundary = Vec::new();
    if minus {
        boundary.push(apply_word(w, DyadicPoint::MINUS_ONE));
    }
    if plus {
        boundary.push(apply_word(w, DyadicPoint::ONE));
    }
    TileInfo {
        word: w.clone(),
        diam: pow2(1 - w.len() as i32),
        boundary,
    }
}

/// Whether the anchor point `c` lies in the tile `𝒯_v`.
fn anchor_in_tile(c: Anchor, v: &[u8]) -> bool {
    match c {
        Anchor::Minus => v.iter().all(|&k| k == 1),
        Anchor::Plus => v.iter().all(|&k| k == 2),
        Anchor::Zero => match v.split_first() {
            None => true,
            Some((1, rest)) => rest.iter().all(|&k| k == 2),
            Some((_, rest)) => rest.iter().all(|&k| k == 1),
        },
    }
}

/// Exact membership `p ∈ 𝒯_v`.
pub fn tile_contains(v: &Word, p: &CsstPoint) -> bool {
    let u = &p.word;
    let c = v.common_prefix_len(u);
    if c == v.len() {
        return true;
    }
    if c == u.len() {
        return anchor_in_tile(p.anchor, &v.letters()[c..]);
    }
    // 𝒯_{w k…} and 𝒯_{w l…} can only meet at g_w(0).
    let w = v.prefix(c);
    p.coords() == apply_word(&w, DyadicPoint::ZERO)
        && anchor_in_tile(Anchor::Zero, &v.letters()[c..])
}

/// Exact test `𝒯_v ∩ 𝒯_w ≠ ∅`.
pub fn tiles_intersect(v: &Word, w: &Word) -> bool {
    let c = v.common_prefix_len(w);
    if c == v.len() || c == w.len() {
        return true;
    }
    anchor_in_tile(Anchor::Zero, &v.letters()[c..])
        && anchor_in_tile(Anchor::Zero, &w.letters()[c..])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BranchVertex {
    pub word: Word,
    pub point: DyadicPoint,
    #[serde(with = "crate::serde_rational")]
    pub height: Rational,
}

/// The branch points of `𝒱ⁿ`, i.e. `g_u(0)` for `ℓ(u) ≤ n - 1`, with their heights.
pub fn branch_vertices(n: usize, budget: u64) -> Result<Vec<BranchVertex>, CsstError> {
    let needed = (3u64.pow(n as u32) - 1) / 2;
    if needed > budget {
        return Err(CsstError::BudgetExceeded { needed, budget });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let words = Word::all_up_to(n - 1);
    Ok(par_iter!(words)
        .map(|w| BranchVertex {
            point: apply_word(&w, DyadicPoint::ZERO),
            height: pow2(-(w.len() as i32)),
            word: w,
        })
        .collect())
}

/// Exact squared Euclidean distance.
pub fn euclidean_distance(p: &DyadicPoint, q: &DyadicPoint) -> Rational {
    p.dist_sq(q)
}

/// Intrinsic distance `ρ(g_u(a), g_v(b))`, exact.
pub fn geodesic_distance(p: &CsstPoint, q: &CsstPoint) -> Rational {
    let u = p.word.letters();
    let v = q.word.letters();
    let c = p.word.common_prefix_len(&q.word);
    let scale = pow2(-(c as i32));
    let (u, v) = (&u[c..], &v[c..]);
    let d = match (u.is_empty(), v.is_empty()) {
        (true, true) => Rational::from_integer((p.anchor.value() - q.anchor.value()).abs()),
        (true, false) => from_anchor(p.anchor, q.anchor, v),
        (false, true) => from_anchor(q.anchor, p.anchor, u),
        (false, false) => {
            from_anchor(Anchor::Zero, p.anchor, u) + from_anchor(Anchor::Zero, q.anchor, v)
        }
    };
    d * scale
}

/// `ρ(c, g_w(a))` for a spine point `c`.
fn from_anchor(c: Anchor, a: Anchor, w: &[u8]) -> Rational {
    let Some((&k, rest)) = w.split_first() else {
        return Rational::from_integer((c.value() - a.value()).abs());
    };
    // 0 = g_k(q_k)
    let q = if k == 1 { Anchor::Plus } else { Anchor::Minus };
    let half = Rational::new(1, 2);
    match (c, k) {
        (Anchor::Zero, _) => from_anchor(q, a, rest) * half,
        (Anchor::Minus, 1) => from_anchor(Anchor::Minus, a, rest) * half,
        (Anchor::Plus, 2) => from_anchor(Anchor::Plus, a, rest) * half,
        _ => Rational::one() + from_anchor(q, a, rest) * half,
    }
}

/// The model `J_n` with its word annotations.
#[derive(Clone, Debug)]
pub struct JnModel {
    pub level: usize,
    pub tree: SimplicialMetricTree,
    /// The level-`n` segment word carrying each edge.
    pub edge_segment: Vec<Word>,
    /// `Some(u)` when the vertex is the branch point `g_u(0)`, `u` shortest.
    pub vertex_word: Vec<Option<Word>>,
    pub points: Vec<DyadicPoint>,
}

impl JnModel {
    pub fn vertex_of_word(&self, u: &Word) -> Option<usize> {
        let p = apply_word(u, DyadicPoint::ZERO);
        self.points.iter().position(|q| *q == p)
    }

    /// The word `w` with `tile = 𝒯_w ∩ J_n`, if any.
    pub fn tile_word(&self, tile: &Tile) -> Option<Word> {
        let first = &self.edge_segment[*tile.edges.first()?];
        let c = tile
            .edges
            .iter()
            .map(|&e| first.common_prefix_len(&self.edge_segment[e]))
            .min()
            .unwrap_or(0);
        let expected = 2 * 3usize.pow((self.level - c) as u32);
        (tile.edges.len() == expected).then(|| first.prefix(c))
    }
}

/// Builds `J_n`: `3ⁿ` segments `g_w([-1,1])` of length `2^{1-n}`, each split at
/// its midpoint, as a geodesic tree with exact dyadic positions.
pub fn build_jn(n: usize) -> JnModel {
    let words = Word::all_of_len(n);
    let mut index: HashMap<DyadicPoint, usize> = HashMap::new();
    let mut points = Vec::new();
    let mut edges = Vec::with_capacity(2 * words.len());
    let mut edge_segment = Vec::with_capacity(2 * words.len());
    let half_len = pow2(-(n as i32));
    let mut id = |p: DyadicPoint, points: &mut Vec<DyadicPoint>| {
        *index.entry(p).or_insert_with(|| {
            points.push(p);
            points.len() - 1
        })
    };
    for w in &words {
        let a = id(apply_word(w, DyadicPoint::MINUS_ONE), &mut points);
        let m = id(apply_word(w, DyadicPoint::ZERO), &mut points);
        let b = id(apply_word(w, DyadicPoint::ONE), &mut points);
        edges.push((a, m, half_len));
        edges.push((m, b, half_len));
        edge_segment.push(w.clone());
        edge_segment.push(w.clone());
    }
    let mut by_point: HashMap<DyadicPoint, Word> = HashMap::new();
    for u in Word::all_up_to(n) {
        by_point
            .entry(apply_word(&u, DyadicPoint::ZERO))
            .or_insert(u);
    }
    let vertex_word = points.iter().map(|p| by_point.get(p).cloned()).collect();
    let tree = SimplicialMetricTree::new(
        MetricMode::Geodesic,
        points.len(),
        edges,
        Some(points.clone()),
        vec![],
    )
    .expect("J_n is a tree")
    .with_truncation(pow2(2 - n as i32));
    JnModel {
        level: n,
        tree,
        edge_segment,
        vertex_word,
        points,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LevelBoundReport {
    pub cut_points: usize,
    pub max_level: usize,
    pub holds: bool,
}

/// Checks `ℓ(X) ≤ #𝒱` for word-addressed tiles.
pub fn level_bound_check(cut_points: usize, tile_words: &[Word]) -> LevelBoundReport {
    let max_level = tile_words.iter().map(Word::len).max().unwrap_or(0);
    LevelBoundReport {
        cut_points,
        max_level,
        holds: max_level <= cut_points,
    }
}

/// Decomposes `J_n` at the given branch words and checks the level bound.
pub fn level_bound_check_jn(model: &JnModel, cut: &[Word]) -> Result<LevelBoundReport, CsstError> {
    let verts: Vec<usize> = cut
        .iter()
        .map(|u| {
            model
                .vertex_of_word(u)
                .ok_or(CsstError::NotWordAddressed { tile: usize::MAX })
        })
        .collect::<Result<_, _>>()?;
    let dec = model.tree.decompose(&verts)?;
    let words = dec
        .tiles
        .iter()
        .enumerate()
        .map(|(i, t)| {
            model
                .tile_word(t)
                .ok_or(CsstError::NotWordAddressed { tile: i })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(level_bound_check(verts.len(), &words))
}

/// Metric constants of the CSST measured on branch points of bounded level.
#[derive(Clone, Debug, Serialize)]
pub struct CsstMetrics {
    pub level_bound: usize,
    /// Distinct points `g_u(-1), g_u(0), g_u(1)` used for quasiconvexity.
    pub points: usize,
    /// `max ρ(p,q)² / |p-q|²`, exact.
    #[serde(with = "crate::serde_rational")]
    pub quasiconvexity_sq: Rational,
    pub quasiconvexity: f64,
    pub quasiconvexity_pair: (CsstPoint, CsstPoint),
    /// `min |g_v(0) - g_w(0)|² / min(2^{-ℓ(v)}, 2^{-ℓ(w)})²`, exact.
    #[serde(with = "crate::serde_rational")]
    pub separation_sq: Rational,
    pub separation: f64,
    pub separation_pair: (Word, Word),
}

/// Exhaustive pair sweeps over addresses `u` with `ℓ(u) ≤ level_bound`:
/// quasiconvexity over `g_u(-1), g_u(0), g_u(1)`, separation over branch points.
pub fn csst_metrics(level_bound: usize) -> CsstMetrics {
    let words = Word::all_up_to(level_bound);
    let mut seen = std::collections::HashSet::new();
    let mut pts: Vec<(CsstPoint, DyadicPoint)> = Vec::new();
    for w in &words {
        for a in [Anchor::Minus, Anchor::Zero, Anchor::Plus] {
            let p = CsstPoint::new(w.clone(), a);
            let c = p.coords();
            if seen.insert(c) {
                pts.push((p, c));
            }
        }
    }
    let pts = &pts;
    let n = pts.len();
    let qc = par_iter!(0..n)
        .map(|i| {
            let (pi, ci) = &pts[i];
            let mut best = (Rational::zero(), i, i);
            for (j, (pj, cj)) in pts.iter().enumerate().skip(i + 1) {
                let r = geodesic_distance(pi, pj);
                let q = r * r / ci.dist_sq(cj);
                if q > best.0 {
                    best = (q, i, j);
                }
            }
            best
        })
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .unwrap();

    let bps: Vec<(Word, DyadicPoint)> = words
        .iter()
        .map(|w| (w.clone(), apply_word(w, DyadicPoint::ZERO)))
        .collect();
    let bps = &bps;
    let sep = par_iter!(0..bps.len())
        .map(|i| {
            let (wi, pi) = &bps[i];
            let mut best = (Rational::from_integer(i64::MAX as i128), i, i);
            for (j, (wj, pj)) in bps.iter().enumerate().skip(i + 1) {
                let h = pow2(-(wi.len().max(wj.len()) as i32));
                let s = pi.dist_sq(pj) / (h * h);
                if s < best.0 {
                    best = (s, i, j);
                }
            }
            best
        })
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
        .unwrap();
    CsstMetrics {
        level_bound,
        points: n,
        quasiconvexity_sq: qc.0,
        quasiconvexity: to_f64(&qc.0).sqrt(),
        quasiconvexity_pair: (pts[qc.1].0.clone(), pts[qc.2].0.clone()),
        separation_sq: sep.0,
        separation: to_f64(&sep.0).sqrt(),
        separation_pair: (bps[sep.1].0.clone(), bps[sep.2].0.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    #[test]
    fn generator_identities() {
        let z = DyadicPoint::ZERO;
        assert_eq!(apply_letter(1, DyadicPoint::ONE), z);
        assert_eq!(apply_letter(2, DyadicPoint::MINUS_ONE), z);
        assert_eq!(apply_letter(3, DyadicPoint::MINUS_ONE), z);
        assert_eq!(apply_letter(3, DyadicPoint::ONE), DyadicPoint::I);
        assert_eq!(
            apply_word(&w("11"), DyadicPoint::ONE),
            DyadicPoint::new(-1, 0, 1)
        );
        assert_eq!(apply_word(&w("3"), z), DyadicPoint::new(0, 1, 1));
    }

    #[test]
    fn tile_examples() {
        let t = tile_info(&w("13"));
        assert_eq!(t.diam, Rational::new(1, 2));
        assert_eq!(t.boundary, vec![DyadicPoint::new(-1, 0, 1)]);
        assert!(tile_info(&Word::empty()).boundary.is_empty());
        assert_eq!(tile_info(&w("1")).boundary, vec![DyadicPoint::ZERO]);
        assert_eq!(tile_info(&w("12")).boundary.len(), 2);
    }

    #[test]
    fn branch_vertex_counts() {
        assert_eq!(branch_vertices(2, 100).unwrap().len(), 4);
        assert_eq!(branch_vertices(3, 100).unwrap().len(), 13);
        assert!(matches!(
            branch_vertices(20, 1000),
            Err(CsstError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn geodesic_examples() {
        let b = |s: &str| CsstPoint::branch(w(s));
        assert_eq!(geodesic_distance(&b(""), &b("1")), Rational::new(1, 2));
        let m1 = CsstPoint::new(Word::empty(), Anchor::Minus);
        let p1 = CsstPoint::new(Word::empty(), Anchor::Plus);
        assert_eq!(geodesic_distance(&m1, &p1), Rational::from_integer(2));
        assert_eq!(geodesic_distance(&b("1"), &b("2")), Rational::one());
        let i = CsstPoint::new(w("3"), Anchor::Plus);
        assert_eq!(geodesic_distance(&m1, &i), Rational::from_integer(2));
    }

    #[test]
    fn euclidean_example() {
        let p = DyadicPoint::new(-1, 0, 1);
        let q = DyadicPoint::new(0, 1, 1);
        assert_eq!(euclidean_distance(&p, &q), Rational::new(1, 2));
    }

    #[test]
    fn jn_counts() {
        for n in 0..5 {
            let m = build_jn(n);
            assert_eq!(m.tree.edge_count(), 2 * 3usize.pow(n as u32));
            assert_eq!(m.tree.vertex_count(), m.tree.edge_count() + 1);
        }
    }

    #[test]
    fn membership_and_intersection() {
        let zero = CsstPoint::branch(Word::empty());
        for k in ["1", "2", "3", "12", "21", "31", "1222"] {
            assert!(tile_contains(&w(k), &zero), "{k}");
        }
        assert!(!tile_contains(&w("11"), &zero));
        assert!(tiles_intersect(&w("12"), &w("21")));
        assert!(!tiles_intersect(&w("11"), &w("21")));
        assert!(tiles_intersect(&w("11"), &w("12")));
        assert!(!tiles_intersect(&w("111"), &w("121")));
    }

    #[test]
    fn level_bound_on_j4() {
        let m = build_jn(4);
        let cut = vec![Word::empty(), w("1"), w("13")];
        let r = level_bound_check_jn(&m, &cut).unwrap();
        assert!(r.holds);
        assert!(r.max_level <= 3);
        let leaf = m.tree.vertex_count();
        let bad = m.tree.decompose(&[leaf]);
        assert!(bad.is_err());
    }
}
