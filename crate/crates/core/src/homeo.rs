//! Tile homeomorphisms onto word tiles of the CSST and their level-by-level
//! refinement along a subdivision.
//!
//! A homeomorphism is represented combinatorially: every tile of the
//! decomposition gets a word `w` (its image is `𝒯_w`) and every cut point
//! `v` a word `u` with `F(v) = g_u(0)`. Consistency is checked exactly.

use std::collections::{BTreeMap, HashMap};

use num::Zero;
use petgraph::unionfind::UnionFind;
use serde::Serialize;
use thiserror::Error;

use crate::csst::{apply_word, boundary_ends, tile_info, tiles_intersect, Anchor, CsstPoint, Word};
use crate::dyadic::{pow2, DyadicPoint};
#[cfg(feature = "parallel")]
use crate::par::prelude::*;
use crate::par_iter;
use crate::quasivisual::{
    check_quasivisual, fit_distortion, DistortionFit, FnMetric, QvError, QvReport, WordCover,
};
use crate::subdivision::{
    calibrate_delta, PropertiesReport, SubdivisionError, SubdivisionSequence,
};
use crate::tree::{SimplicialMetricTree, TreeError, TreePoint};
use crate::Rational;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomeoError {
    #[error("tile with boundary {0:?} has more than two boundary points")]
    NotEdgeLike(Vec<usize>),
    #[error("mark {0} is not a leaf of its own leaf tile")]
    MarkNotInLeafTile(usize),
    #[error("vertex {0} violates trivalence")]
    NotTrivalent(usize),
    #[error("invalid marks: {0}")]
    BadMarks(String),
    #[error("subdivision does not satisfy the tile preconditions through level {0}")]
    PreconditionNotVerified(usize),
    #[error("requested depth {requested}, only {built} levels built")]
    DepthExceeded { requested: usize, built: usize },
    #[error("orientation mismatch at level {level}, tile {tile}")]
    Orientation { level: usize, tile: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Subdivision(#[from] SubdivisionError),
    #[error(transparent)]
    Qv(#[from] QvError),
}

/// Result of the single-tile construction, with words relative to the tile.
#[derive(Clone, Debug, Serialize)]
pub struct TileHomeo {
    /// Edge set of each tile of `X \ 𝒱` and its image word.
    pub tiles: Vec<(Vec<usize>, Word)>,
    /// `F(v) = g_u(0)` for cut points.
    pub vertex_words: Vec<(usize, Word)>,
    /// Images of the marks.
    pub mark_images: Vec<(usize, CsstPoint)>,
    pub checks: TileChecks,
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct TileChecks {
    /// (i) marks land on their prescribed ends.
    pub marks_normalized: bool,
    /// (ii) with one mark and `#𝒱 ≥ 2`, `F(P) ∈ {𝒯₁₁, 𝒯₂₂}`.
    pub single_mark_tile: Option<bool>,
    /// (iii) with two marks and three cut points on `[p, q]`, `F(P) = 𝒯₁₁`, `F(Q) = 𝒯₂₂`.
    pub double_mark_tiles: Option<bool>,
    /// (iv) `1 ≤ ℓ(F(X)) ≤ #𝒱`.
    pub level_bound: bool,
    /// Tile words form a complete prefix code and cut points map onto tile boundaries.
    pub consistent: bool,
}

impl TileChecks {
    pub fn all(&self) -> bool {
        self.marks_normalized
            && self.single_mark_tile.unwrap_or(true)
            && self.double_mark_tiles.unwrap_or(true)
            && self.level_bound
            && self.consistent
    }
}

struct Builder<'a> {
    tree: &'a SimplicialMetricTree,
}

#[derive(Default)]
struct Output {
    tiles: Vec<(Vec<usize>, Word)>,
    vertex_words: Vec<(usize, Word)>,
    mark_images: Vec<(usize, CsstPoint)>,
}

fn contains(sorted: &[usize], x: usize) -> bool {
    sorted.binary_search(&x).is_ok()
}

impl<'a> Builder<'a> {
    fn region_degree(&self, region: &[usize], v: usize) -> usize {
        self.tree
            .neighbors(v)
            .iter()
            .filter(|(_, e)| contains(region, *e))
            .count()
    }

    fn region_vertices(&self, region: &[usize]) -> Vec<usize> {
        let mut vs: Vec<usize> = region
            .iter()
            .flat_map(|&e| {
                let (a, b) = self.tree.edge(e);
                [a, b]
            })
            .collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    /// Edge sets of the components of `region \ {x}`, each closed up with `x`.
    fn components_at(&self, region: &[usize], x: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for &(n0, e0) in self.tree.neighbors(x) {
            if !contains(region, e0) {
                continue;
            }
            let mut edges = vec![e0];
            let mut stack = vec![(n0, e0)];
            while let Some((v, from)) = stack.pop() {
                if v == x {
                    continue;
                }
                for &(w, e) in self.tree.neighbors(v) {
                    if e != from && contains(region, e) {
                        edges.push(e);
                        stack.push((w, e));
                    }
                }
            }
            edges.sort_unstable();
            out.push(edges);
        }
        out
    }

    /// Path-length diameter of an edge set.
    fn diam_num(&self, edges: &[usize]) -> i128 {
        let vs = self.region_vertices(edges);
        let far = |s: usize| {
            vs.iter()
                .copied()
                .max_by_key(|&v| (self.tree.path_len_num(s, v), std::cmp::Reverse(v)))
                .unwrap()
        };
        let a = far(vs[0]);
        self.tree.path_len_num(a, far(a))
    }

    /// Tiles of `region \ cut` as sorted edge sets, with boundaries.
    fn tiles(&self, region: &[usize], cut: &[usize]) -> Vec<(Vec<usize>, Vec<usize>)> {
        let idx: HashMap<usize, usize> = region.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut uf = UnionFind::<usize>::new(region.len());
        for v in self.region_vertices(region) {
            if contains(cut, v) {
                continue;
            }
            let es: Vec<usize> = self
                .tree
                .neighbors(v)
                .iter()
                .filter_map(|(_, e)| idx.get(e).copied())
                .collect();
            for w in es.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        let labels = uf.into_labeling();
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &e) in region.iter().enumerate() {
            groups.entry(labels[i]).or_default().push(e);
        }
        let mut out: Vec<(Vec<usize>, Vec<usize>)> = groups
            .into_values()
            .map(|edges| {
                let b = self
                    .region_vertices(&edges)
                    .into_iter()
                    .filter(|v| contains(cut, *v))
                    .collect();
                (edges, b)
            })
            .collect();
        out.sort();
        out
    }

    fn balanced(&self, region: &[usize], candidates: &[usize]) -> usize {
        candidates
            .iter()
            .copied()
            .min_by_key(|&x| {
                let worst = self
                    .components_at(region, x)
                    .iter()
                    .map(|c| self.diam_num(c))
                    .max()
                    .unwrap_or(0);
                (worst, x)
            })
            .expect("non-empty candidate set")
    }

    fn recurse(
        &self,
        region: Vec<usize>,
        cut: Vec<usize>,
        marks: Vec<(usize, Anchor)>,
        force: Option<usize>,
        prefix: Word,
        out: &mut Output,
    ) {
        if cut.is_empty() {
            for (m, a) in &marks {
                out.mark_images
                    .push((*m, CsstPoint::new(prefix.clone(), *a)));
            }
            out.tiles.push((region, prefix));
            return;
        }
        let x = force.unwrap_or_else(|| {
            if let [(p, _), (q, _)] = marks[..] {
                let path = self.tree.path(p, q);
                let cands: Vec<usize> = path
                    .iter()
                    .copied()
                    .filter(|v| contains(&cut, *v))
                    .collect();
                let mut cands = cands;
                cands.sort_unstable();
                self.balanced(&region, &cands)
            } else {
                self.balanced(&region, &cut)
            }
        });
        self.split(region, cut, marks, x, [None; 3], prefix, out);
    }

    #[allow(clippy::too_many_arguments)]
    fn split(
        &self,
        region: Vec<usize>,
        cut: Vec<usize>,
        marks: Vec<(usize, Anchor)>,
        x: usize,
        force: [Option<usize>; 3],
        prefix: Word,
        out: &mut Output,
    ) {
        let comps = self.components_at(&region, x);
        let mut letter = vec![0u8; comps.len()];
        let mut comp_marks: Vec<Vec<(usize, Anchor)>> = vec![Vec::new(); comps.len()];
        for &(m, a) in &marks {
            let i = comps
                .iter()
                .position(|c| {
                    c.iter().any(|&e| {
                        let (u, v) = self.tree.edge(e);
                        u == m || v == m
                    })
                })
                .expect("mark inside region");
            letter[i] = if a == Anchor::Minus { 1 } else { 2 };
            comp_marks[i].push((m, a));
        }
        let mut free: Vec<u8> = (1..=3).filter(|k| !letter.contains(k)).collect();
        let mut rest: Vec<usize> = (0..comps.len()).filter(|&i| letter[i] == 0).collect();
        let diams: Vec<i128> = comps.iter().map(|c| self.diam_num(c)).collect();
        let min_vertex: Vec<usize> = comps
            .iter()
            .map(|c| {
                self.region_vertices(c)
                    .into_iter()
                    .find(|&v| v != x)
                    .unwrap()
            })
            .collect();
        rest.sort_by(|&a, &b| {
            diams[b]
                .cmp(&diams[a])
                .then(min_vertex[a].cmp(&min_vertex[b]))
        });
        for i in rest {
            letter[i] = free.remove(0);
        }
        out.vertex_words.push((x, prefix.clone()));
        let mut order: Vec<usize> = (0..comps.len()).collect();
        order.sort_by_key(|&i| letter[i]);
        for i in order {
            let k = letter[i];
            let verts = self.region_vertices(&comps[i]);
            let sub_cut: Vec<usize> = cut
                .iter()
                .copied()
                .filter(|&v| v != x && contains(&verts, v))
                .collect();
            let mut m = comp_marks[i].clone();
            m.push((x, if k == 1 { Anchor::Plus } else { Anchor::Minus }));
            m.sort_by_key(|&(_, a)| a);
            let f = force[(k - 1) as usize];
            self.recurse(comps[i].clone(), sub_cut, m, f, prefix.push(k), out);
        }
    }
}

/// Builds `F : X → 𝒯` mapping the tiles of `X \ 𝒱` onto word tiles.
///
/// `region` is the edge set of `X` (the whole tree if `None`); `marks` are
/// leaves of `X` with their prescribed images `-1` or `1`.
pub fn build_tile_homeo(
    tree: &SimplicialMetricTree,
    region: Option<&[usize]>,
    cut: &[usize],
    marks: &[(usize, Anchor)],
) -> Result<TileHomeo, HomeoError> {
    let b = Builder { tree };
    let mut region: Vec<usize> = match region {
        Some(r) => r.to_vec(),
        None => (0..tree.edge_count()).collect(),
    };
    region.sort_unstable();
    region.dedup();
    let mut cut = cut.to_vec();
    cut.sort_unstable();
    cut.dedup();
    let verts = b.region_vertices(&region);
    for &v in &verts {
        if b.region_degree(&region, v) > 3 {
            return Err(HomeoError::NotTrivalent(v));
        }
    }
    for &v in &cut {
        if !contains(&verts, v) || b.region_degree(&region, v) != 3 {
            return Err(HomeoError::NotTrivalent(v));
        }
    }
    if marks.len() > 2 {
        return Err(HomeoError::BadMarks("at most two marks".into()));
    }
    if marks.len() == 2 && marks[0].1 == marks[1].1 {
        return Err(HomeoError::BadMarks(
            "two marks need opposite targets".into(),
        ));
    }
    if marks.iter().any(|m| m.1 == Anchor::Zero) {
        return Err(HomeoError::BadMarks("marks map to -1 or 1".into()));
    }
    let tiles = b.tiles(&region, &cut);
    for (_, bd) in &tiles {
        if bd.len() > 2 {
            return Err(HomeoError::NotEdgeLike(bd.clone()));
        }
    }
    let mut mark_tile = Vec::new();
    for &(m, _) in marks {
        if !contains(&verts, m) || b.region_degree(&region, m) != 1 {
            return Err(HomeoError::MarkNotInLeafTile(m));
        }
        let t = tiles
            .iter()
            .position(|(es, _)| {
                es.iter().any(|&e| {
                    let (u, v) = tree.edge(e);
                    u == m || v == m
                })
            })
            .unwrap();
        if !cut.is_empty() && tiles[t].1.len() != 1 {
            return Err(HomeoError::MarkNotInLeafTile(m));
        }
        mark_tile.push(t);
    }
    if mark_tile.len() == 2 && mark_tile[0] == mark_tile[1] && !cut.is_empty() {
        return Err(HomeoError::MarkNotInLeafTile(marks[1].0));
    }

    let mut marks_sorted = marks.to_vec();
    marks_sorted.sort_by_key(|&(_, a)| a);
    let mut out = Output::default();
    let mut expect_single = false;
    let mut expect_double = false;
    match marks_sorted.len() {
        1 if cut.len() >= 2 => {
            // F(P) ∈ {𝒯₁₁, 𝒯₂₂}: split at the far end of an edge-tile at p'
            let (p, a) = marks_sorted[0];
            let p_prime = tiles[mark_tile[0]].1[0];
            let mut cands: Vec<usize> = tiles
                .iter()
                .filter(|(_, bd)| bd.len() == 2 && bd.contains(&p_prime))
                .map(|(_, bd)| if bd[0] == p_prime { bd[1] } else { bd[0] })
                .collect();
            cands.sort_unstable();
            let x = b.balanced(&region, &cands);
            let mut force = [None; 3];
            force[if a == Anchor::Minus { 0 } else { 1 }] = Some(p_prime);
            let _ = p;
            expect_single = true;
            b.split(
                region,
                cut.clone(),
                marks_sorted.clone(),
                x,
                force,
                Word::empty(),
                &mut out,
            );
        }
        2 => {
            let (p, q) = (marks_sorted[0].0, marks_sorted[1].0);
            let on_path: Vec<usize> = tree
                .path(p, q)
                .into_iter()
                .filter(|v| contains(&cut, *v))
                .collect();
            if on_path.len() >= 3 {
                let (pp, qp) = (on_path[0], on_path[on_path.len() - 1]);
                let mut cands = on_path[1..on_path.len() - 1].to_vec();
                cands.sort_unstable();
                let x = b.balanced(&region, &cands);
                expect_double = true;
                b.split(
                    region,
                    cut.clone(),
                    marks_sorted.clone(),
                    x,
                    [Some(pp), Some(qp), None],
                    Word::empty(),
                    &mut out,
                );
            } else {
                b.recurse(
                    region,
                    cut.clone(),
                    marks_sorted.clone(),
                    None,
                    Word::empty(),
                    &mut out,
                );
            }
        }
        _ => b.recurse(
            region,
            cut.clone(),
            marks_sorted.clone(),
            None,
            Word::empty(),
            &mut out,
        ),
    }

    let checks = tile_checks(
        tree,
        &out,
        &marks_sorted,
        &cut,
        expect_single,
        expect_double,
    );
    out.tiles.sort();
    out.vertex_words.sort();
    out.mark_images.sort_by_key(|m| m.0);
    Ok(TileHomeo {
        tiles: out.tiles,
        vertex_words: out.vertex_words,
        mark_images: out.mark_images,
        checks,
    })
}

/// Whether the words form a complete prefix code, i.e. `⋃ 𝒯_w = 𝒯`.
pub fn is_complete_prefix_code(words: &[&Word]) -> bool {
    let kraft: Rational = words
        .iter()
        .map(|w| Rational::new(1, 3i128.pow(w.len() as u32)))
        .sum();
    if kraft != Rational::from_integer(1) {
        return false;
    }
    let mut sorted: Vec<&Word> = words.to_vec();
    sorted.sort();
    sorted.windows(2).all(|w| !w[0].is_prefix_of(w[1]))
}

fn tile_checks(
    tree: &SimplicialMetricTree,
    out: &Output,
    marks: &[(usize, Anchor)],
    cut: &[usize],
    expect_single: bool,
    expect_double: bool,
) -> TileChecks {
    let marks_normalized = marks.iter().all(|(m, a)| {
        out.mark_images
            .iter()
            .find(|(v, _)| v == m)
            .is_some_and(|(_, img)| img.coords() == a.point())
    });
    let word_of_mark = |m: usize| {
        out.tiles
            .iter()
            .find(|(es, _)| {
                es.iter().any(|&e| {
                    let (u, v) = tree.edge(e);
                    u == m || v == m
                })
            })
            .map(|(_, w)| w.to_string())
    };
    let single_mark_tile = expect_single.then(|| {
        let w = word_of_mark(marks[0].0);
        w.as_deref()
            == Some(if marks[0].1 == Anchor::Minus {
                "11"
            } else {
                "22"
            })
    });
    let double_mark_tiles = expect_double.then(|| {
        word_of_mark(marks[0].0).as_deref() == Some("11")
            && word_of_mark(marks[1].0).as_deref() == Some("22")
    });
    let level_bound = cut.is_empty()
        || out
            .tiles
            .iter()
            .all(|(_, w)| !w.is_empty() && w.len() <= cut.len());
    let words: Vec<&Word> = out.tiles.iter().map(|(_, w)| w).collect();
    let image: HashMap<usize, DyadicPoint> = out
        .vertex_words
        .iter()
        .map(|(v, w)| (*v, apply_word(w, DyadicPoint::ZERO)))
        .collect();
    let boundary_ok = out.tiles.iter().all(|(es, w)| {
        let info = tile_info(w);
        let mut vs: Vec<usize> = es
            .iter()
            .flat_map(|&e| {
                let (a, b) = tree.edge(e);
                [a, b]
            })
            .filter(|v| image.contains_key(v))
            .collect();
        vs.sort_unstable();
        vs.dedup();
        vs.len() == info.boundary.len() && vs.iter().all(|v| info.boundary.contains(&image[v]))
    });
    TileChecks {
        marks_normalized,
        single_mark_tile,
        double_mark_tiles,
        level_bound,
        consistent: is_complete_prefix_code(&words) && boundary_ok,
    }
}

/// The refined homeomorphisms `F⁰, …, Fⁿ` along a subdivision.
#[derive(Clone, Debug, Serialize)]
pub struct TileHomeomorphism {
    /// `words[n][i]`: `Fⁿ(X) = 𝒯_w` for tile `i` of level `n`.
    pub words: Vec<Vec<Word>>,
    /// `F(v) = g_u(0)` for every cut point.
    pub vertex_words: BTreeMap<usize, Word>,
    /// Level at which each cut point first appears.
    pub vertex_level: BTreeMap<usize, usize>,
    pub checks: Vec<RefinementChecks>,
}

/// (A)–(D) for one refinement step `n → n + 1`.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct RefinementChecks {
    pub level: usize,
    /// (A) each tile homeomorphism satisfies (i)–(iv) and is consistent.
    pub tile_homeomorphisms: bool,
    /// (B) `F^{n+1}(X) = Fⁿ(X)`.
    pub images_agree: bool,
    /// (C) `ℓ + 1 ≤ ℓ(child) ≤ ℓ + N`.
    pub level_increments: bool,
    /// (D) children meeting `∂X` sit exactly two levels deeper.
    pub boundary_children: bool,
}

impl RefinementChecks {
    pub fn all(&self) -> bool {
        self.tile_homeomorphisms
            && self.images_agree
            && self.level_increments
            && self.boundary_children
    }
}

impl TileHomeomorphism {
    pub fn levels(&self) -> usize {
        self.words.len()
    }

    pub fn checks_pass(&self) -> bool {
        self.checks.iter().all(RefinementChecks::all)
    }

    pub fn vertex_image(&self, v: usize) -> Option<DyadicPoint> {
        self.vertex_words
            .get(&v)
            .map(|w| apply_word(w, DyadicPoint::ZERO))
    }
}

/// Refines tile by tile up to level `upto`, with normalization on tile boundaries.
pub fn refine_homeo(
    tree: &SimplicialMetricTree,
    seq: &SubdivisionSequence,
    report: &PropertiesReport,
    upto: usize,
) -> Result<TileHomeomorphism, HomeoError> {
    if upto > seq.n_max() || !report.tile_preconditions_hold() || report.levels < upto + 1 {
        return Err(HomeoError::PreconditionNotVerified(upto));
    }
    let mut words = vec![vec![Word::empty()]];
    let mut vertex_words: BTreeMap<usize, Word> = BTreeMap::new();
    let mut vertex_level = BTreeMap::new();
    let mut checks = Vec::new();
    for n in 0..upto {
        let level = &seq.levels[n];
        let prev = &words[n];
        let vw = &vertex_words;
        let results: Vec<Result<(usize, TileHomeo), HomeoError>> = par_iter!(0..level.tiles.len())
            .map(|i| {
                let tile = &level.tiles[i];
                let w = &prev[i];
                let marks = tile_marks(w, &tile.boundary, vw)
                    .ok_or(HomeoError::Orientation { level: n, tile: i })?;
                let h = build_tile_homeo(tree, Some(&tile.edges), &seq.interior_cut(n, i), &marks)?;
                Ok((i, h))
            })
            .collect();
        let mut next = vec![Word::empty(); seq.levels[n + 1].tiles.len()];
        let mut step = RefinementChecks {
            level: n,
            tile_homeomorphisms: true,
            images_agree: true,
            level_increments: true,
            boundary_children: true,
        };
        for r in results {
            let (i, h) = r?;
            let w = &prev[i];
            let tile = &level.tiles[i];
            step.tile_homeomorphisms &= h.checks.all();
            let rel: Vec<&Word> = h.tiles.iter().map(|(_, u)| u).collect();
            step.images_agree &= is_complete_prefix_code(&rel);
            for (edges, u) in &h.tiles {
                let j = seq.levels[n + 1].edge_tile[edges[0]];
                let child = &seq.levels[n + 1].tiles[j];
                step.images_agree &= child.edges == *edges;
                step.level_increments &= !u.is_empty() && u.len() <= report.n_bound;
                if tile.boundary.iter().any(|&b| child.contains(b)) {
                    step.boundary_children &= u.len() == 2;
                }
                next[j] = w.concat(u);
            }
            for (v, u) in h.vertex_words {
                vertex_words.insert(v, w.concat(&u));
                vertex_level.insert(v, n + 1);
            }
        }
        checks.push(step);
        words.push(next);
    }
    Ok(TileHomeomorphism {
        words,
        vertex_words,
        vertex_level,
        checks,
    })
}

/// Marks of a tile whose image is `𝒯_w`: its boundary points oriented to
/// `g_w(-1)` / `g_w(1)`.
fn tile_marks(
    w: &Word,
    boundary: &[usize],
    vw: &BTreeMap<usize, Word>,
) -> Option<Vec<(usize, Anchor)>> {
    let minus = apply_word(w, DyadicPoint::MINUS_ONE);
    let plus = apply_word(w, DyadicPoint::ONE);
    let (has_minus, has_plus) = boundary_ends(w);
    let mut marks = Vec::new();
    for &b in boundary {
        let img = apply_word(vw.get(&b)?, DyadicPoint::ZERO);
        if img == minus && has_minus {
            marks.push((b, Anchor::Minus));
        } else if img == plus && has_plus {
            marks.push((b, Anchor::Plus));
        } else {
            return None;
        }
    }
    (marks.len() == usize::from(has_minus) + usize::from(has_plus)).then_some(marks)
}

#[derive(Clone, Debug, Serialize)]
pub struct IsoReport {
    pub levels: usize,
    pub pass: bool,
    pub failures: Vec<String>,
}

/// Checks that `Fⁿ` preserves intersections within each level and
/// containment between consecutive levels, and that `{𝒴ⁿ}` is a subdivision.
pub fn verify_isomorphism(seq: &SubdivisionSequence, homeo: &TileHomeomorphism) -> IsoReport {
    let mut failures = Vec::new();
    let levels = homeo.levels();
    if homeo.words[0] != vec![Word::empty()] {
        failures.push("level 0 is not {𝒯}".to_string());
    }
    for n in 0..levels {
        let tiles = &seq.levels[n].tiles;
        let words = &homeo.words[n];
        let refs: Vec<&Word> = words.iter().collect();
        if !is_complete_prefix_code(&refs) {
            failures.push(format!("level {n}: images do not tile 𝒯"));
        }
        let bad = par_iter!(0..tiles.len())
            .filter_map(|i| {
                (i + 1..tiles.len())
                    .find(|&j| {
                        let meet = tiles[i]
                            .boundary
                            .iter()
                            .any(|b| tiles[j].boundary.contains(b));
                        meet != tiles_intersect(&words[i], &words[j])
                    })
                    .map(|j| (i, j))
            })
            .min_by(|a, b| a.cmp(b));
        if let Some((i, j)) = bad {
            failures.push(format!(
                "level {n}: intersection of tiles {i}, {j} not preserved"
            ));
        }
        if n + 1 < levels {
            let next = &homeo.words[n + 1];
            let bad = par_iter!(0..next.len())
                .filter_map(|j| {
                    (0..words.len())
                        .find(|&i| (seq.parents[n + 1][j] == i) != words[i].is_prefix_of(&next[j]))
                        .map(|i| (i, j))
                })
                .min_by(|a, b| a.cmp(b));
            if let Some((i, j)) = bad {
                failures.push(format!(
                    "levels {n}→{}: containment of tile {j} in {i} not preserved",
                    n + 1
                ));
            }
        }
    }
    IsoReport {
        levels,
        pass: failures.is_empty(),
        failures,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub depth: usize,
    pub word: Word,
    /// `g_w(0)` of the image tile; every point of `𝒯_w` is within `error_bound`.
    pub approx: DyadicPoint,
    #[serde(with = "crate::serde_rational")]
    pub error_bound: Rational,
    /// The exact image when `x` is a cut point of a built level.
    pub exact: Option<DyadicPoint>,
}

/// Approximates `F(x)` by descending through the lowest-id tiles containing `x`.
pub fn evaluate(
    seq: &SubdivisionSequence,
    homeo: &TileHomeomorphism,
    x: &TreePoint,
    depth: usize,
) -> Result<Evaluation, HomeoError> {
    if depth >= homeo.levels() {
        return Err(HomeoError::DepthExceeded {
            requested: depth,
            built: homeo.levels(),
        });
    }
    let mut tile = 0usize;
    for n in 1..=depth {
        let level = &seq.levels[n];
        tile = match x {
            TreePoint::Interior { edge, .. } => level.edge_tile[*edge],
            TreePoint::Vertex(v) => (0..level.tiles.len())
                .find(|&j| seq.parents[n][j] == tile && level.tiles[j].contains(*v))
                .expect("some child contains the point"),
        };
    }
    let word = homeo.words[depth][tile].clone();
    let exact = match x {
        TreePoint::Vertex(v) if homeo.vertex_level.get(v).is_some_and(|&l| l <= depth) => {
            homeo.vertex_image(*v)
        }
        _ => None,
    };
    Ok(Evaluation {
        depth,
        approx: apply_word(&word, DyadicPoint::ZERO),
        error_bound: pow2(1 - word.len() as i32),
        exact,
        word,
    })
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub grid: Vec<Rational>,
    pub n_max: usize,
    pub normalize: bool,
    pub triple_budget: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageResult {
    pub stage: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub sequence: SubdivisionSequence,
    pub properties: PropertiesReport,
    pub homeo: TileHomeomorphism,
    pub isomorphism: IsoReport,
    pub image_qv: QvReport,
    pub distortion: DistortionFit,
    pub trail: Vec<(Rational, Vec<String>)>,
    pub stages: Vec<StageResult>,
}

impl PipelineOutcome {
    pub fn pass(&self) -> bool {
        self.stages.iter().all(|s| s.pass)
    }
}

/// Calibrate, subdivide, refine, verify, and fit the distortion of `F` on `𝒱^{n_max}`.
pub fn end_to_end(
    tree: &SimplicialMetricTree,
    config: &PipelineConfig,
) -> Result<PipelineOutcome, HomeoError> {
    let cal = calibrate_delta(tree, config.n_max, &config.grid, config.normalize)?;
    let homeo = refine_homeo(tree, &cal.sequence, &cal.report, config.n_max)?;
    let isomorphism = verify_isomorphism(&cal.sequence, &homeo);
    let image_qv = check_quasivisual(&WordCover::new(homeo.words.clone()))?;
    let pts: Vec<usize> = cal.sequence.cuts[config.n_max].clone();
    let images: Vec<DyadicPoint> = pts
        .iter()
        .map(|&v| homeo.vertex_image(v).expect("cut point image"))
        .collect();
    let d1 = FnMetric(pts.len(), |i: usize, j: usize| {
        tree.dist_f64(pts[i], pts[j])
    });
    let d2 = FnMetric(pts.len(), |i: usize, j: usize| {
        images[i].dist_f64(&images[j])
    });
    let distortion = fit_distortion(&d1, &d2, config.triple_budget, config.seed)?;
    let stages = vec![
        StageResult {
            stage: "calibrate",
            pass: cal.report.pass,
            detail: format!("δ = {}", crate::dyadic::fmt_rational(&cal.delta)),
        },
        StageResult {
            stage: "refine",
            pass: homeo.checks_pass(),
            detail: format!("{} refinement steps", homeo.checks.len()),
        },
        StageResult {
            stage: "isomorphism",
            pass: isomorphism.pass,
            detail: isomorphism.failures.join("; "),
        },
        StageResult {
            stage: "image-quasivisual",
            pass: image_qv.pass,
            detail: image_qv.failures.join("; "),
        },
        StageResult {
            stage: "distortion",
            pass: distortion.max_residual.is_zero(),
            detail: format!("α = {}, K = {:.6}", distortion.alpha, distortion.k),
        },
    ];
    Ok(PipelineOutcome {
        sequence: cal.sequence,
        properties: cal.report,
        homeo,
        isomorphism,
        image_qv,
        distortion,
        trail: cal.trail,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::tests::tripod;
    use crate::tree::MetricMode;

    /// A path a–b–c–d–e with two-leaf sprouts at b, c, d: branch points 1, 2, 3.
    fn comb() -> SimplicialMetricTree {
        let one = Rational::from_integer(1);
        let e = vec![
            (0, 1, one),
            (1, 2, one),
            (2, 3, one),
            (3, 4, one),
            (1, 5, one),
            (2, 6, one),
            (3, 7, one),
        ];
        SimplicialMetricTree::new(MetricMode::Geodesic, 8, e, None, vec![]).unwrap()
    }

    #[test]
    fn tripod_unmarked() {
        let t = tripod();
        let h = build_tile_homeo(&t, None, &[0], &[]).unwrap();
        let words: Vec<String> = h.tiles.iter().map(|(_, w)| w.to_string()).collect();
        let mut sorted = words.clone();
        sorted.sort();
        assert_eq!(sorted, vec!["1", "2", "3"]);
        assert!(h.checks.all());
        // longest leg gets letter 1
        let leg3 = h.tiles.iter().find(|(es, _)| es == &vec![2]).unwrap();
        assert_eq!(leg3.1.to_string(), "1");
    }

    #[test]
    fn two_marks_with_three_cut_points() {
        let t = comb();
        let h = build_tile_homeo(
            &t,
            None,
            &[1, 2, 3],
            &[(0, Anchor::Minus), (4, Anchor::Plus)],
        )
        .unwrap();
        assert_eq!(h.checks.double_mark_tiles, Some(true));
        assert!(h.checks.all(), "{:?}", h.checks);
    }

    #[test]
    fn one_mark_normalization() {
        let t = comb();
        for a in [Anchor::Minus, Anchor::Plus] {
            let h = build_tile_homeo(&t, None, &[1, 2, 3], &[(0, a)]).unwrap();
            assert_eq!(h.checks.single_mark_tile, Some(true));
            assert!(h.checks.all());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = comb();
        assert_eq!(
            build_tile_homeo(&t, None, &[1], &[(2, Anchor::Minus)]).unwrap_err(),
            HomeoError::MarkNotInLeafTile(2)
        );
        assert_eq!(
            build_tile_homeo(&t, None, &[0], &[]).unwrap_err(),
            HomeoError::NotTrivalent(0)
        );
        let one = Rational::from_integer(1);
        let star = SimplicialMetricTree::new(
            MetricMode::Geodesic,
            5,
            vec![(0, 1, one), (0, 2, one), (0, 3, one), (0, 4, one)],
            None,
            vec![],
        )
        .unwrap();
        assert_eq!(
            build_tile_homeo(&star, None, &[], &[]).unwrap_err(),
            HomeoError::NotTrivalent(0)
        );
    }

    #[test]
    fn prefix_codes() {
        let w = |s: &str| s.parse::<Word>().unwrap();
        let a = [w("1"), w("2"), w("31"), w("32"), w("33")];
        assert!(is_complete_prefix_code(&a.iter().collect::<Vec<_>>()));
        let b = [w("1"), w("2")];
        assert!(!is_complete_prefix_code(&b.iter().collect::<Vec<_>>()));
    }
}
