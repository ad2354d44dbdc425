//! Height-threshold subdivisions `𝒱ⁿ = {p : H(p) ≥ δⁿ}` and the checks that
//! make them usable for the tile homeomorphism construction.

use serde::Serialize;
use thiserror::Error;

use crate::dyadic::{fmt_rational, rpow, to_f64};
#[cfg(feature = "parallel")]
use crate::par::prelude::*;
use crate::par_iter;
use crate::quasivisual::{
    check_quasivisual, check_visual, QvError, QvReport, TreeCover, VisualReport, DRIFT_TOLERANCE,
};
use crate::tree::{Decomposition, Dist, SimplicialMetricTree, TreeError};
use crate::Rational;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubdivisionError {
    #[error("δ must lie strictly between 0 and 1, got {0}")]
    BadDelta(String),
    #[error("no δ in the grid passes all properties: {0:?}")]
    NoFeasibleDelta(Vec<String>),
    #[error("empty δ grid")]
    EmptyGrid,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Qv(#[from] QvError),
}

#[derive(Clone, Debug)]
pub struct SubdivisionConfig {
    pub delta: Rational,
    pub n_max: usize,
    /// Measure heights relative to `diam T`, i.e. rescale the tree to diameter 1.
    pub normalize: bool,
}

impl SubdivisionConfig {
    pub fn new(delta: Rational, n_max: usize) -> Self {
        SubdivisionConfig {
            delta,
            n_max,
            normalize: true,
        }
    }
}

/// Levels `0..=n_max` of cut sets and their decompositions.
#[derive(Clone, Debug)]
pub struct SubdivisionSequence {
    pub delta: Rational,
    pub normalize: bool,
    /// Lengths are divided by this factor before thresholds are applied.
    pub scale: Dist,
    pub heights: Vec<Dist>,
    pub cuts: Vec<Vec<usize>>,
    pub levels: Vec<Decomposition>,
    /// `parents[n][i]`: the level `n - 1` tile containing tile `i` of level `n`.
    pub parents: Vec<Vec<usize>>,
    /// Branch points whose certified height bracket straddles `δⁿ`.
    pub straddling: Vec<Vec<usize>>,
    /// Levels whose threshold is below the truncation bound of the model.
    pub resolution_limited: Vec<bool>,
}

impl SubdivisionSequence {
    pub fn n_max(&self) -> usize {
        self.levels.len() - 1
    }

    /// `𝒱_X = 𝒱^{n+1} ∩ int X` for a tile of level `n < n_max`.
    pub fn interior_cut(&self, n: usize, tile: usize) -> Vec<usize> {
        let t = &self.levels[n].tiles[tile];
        self.cuts[n + 1]
            .iter()
            .copied()
            .filter(|v| t.contains(*v) && t.boundary.binary_search(v).is_err())
            .collect()
    }

    /// Children of a tile of level `n`, as tile ids of level `n + 1`.
    pub fn children(&self, n: usize, tile: usize) -> Vec<usize> {
        (0..self.levels[n + 1].tiles.len())
            .filter(|&j| self.parents[n + 1][j] == tile)
            .collect()
    }

    pub fn cover<'a>(&'a self, tree: &'a SimplicialMetricTree) -> TreeCover<'a> {
        TreeCover::new(
            tree,
            self.levels.iter().collect(),
            1.0 / self.scale.to_f64(),
        )
    }
}

fn validate_delta(delta: &Rational) -> Result<(), SubdivisionError> {
    if *delta <= Rational::from_integer(0) || *delta >= Rational::from_integer(1) {
        return Err(SubdivisionError::BadDelta(fmt_rational(delta)));
    }
    Ok(())
}

/// Builds `𝒱ⁿ` and `𝒳ⁿ` for `n ≤ n_max`. `𝒱⁰ = ∅`, so `𝒳⁰ = {T}`.
pub fn build_levels(
    tree: &SimplicialMetricTree,
    config: &SubdivisionConfig,
) -> Result<SubdivisionSequence, SubdivisionError> {
    build_with_heights(tree, config, tree.heights())
}

fn build_with_heights(
    tree: &SimplicialMetricTree,
    config: &SubdivisionConfig,
    heights: Vec<Dist>,
) -> Result<SubdivisionSequence, SubdivisionError> {
    validate_delta(&config.delta)?;
    let scale = if config.normalize {
        tree.diameter()
    } else {
        Dist::from_len(Rational::from_integer(1))
    };
    let bound = tree.truncation().map(|b| to_f64(&b));
    let branch = tree.branch_points();
    let mut cuts = vec![Vec::new()];
    let mut straddling = vec![Vec::new()];
    let mut limited = vec![false];
    for n in 1..=config.n_max {
        let thr_sq = rpow(&config.delta, 2 * n as u32) * scale.sq();
        let cut: Vec<usize> = branch
            .iter()
            .copied()
            .filter(|&v| heights[v].sq() >= thr_sq)
            .collect();
        let thr = to_f64(&thr_sq).sqrt();
        let st = match bound {
            Some(b) => branch
                .iter()
                .copied()
                .filter(|&v| heights[v].sq() < thr_sq && heights[v].to_f64() + b >= thr)
                .collect(),
            None => Vec::new(),
        };
        limited.push(bound.is_some_and(|b| thr <= b));
        cuts.push(cut);
        straddling.push(st);
    }
    assemble(tree, config, scale, heights, cuts, straddling, limited)
}

/// Rebuilds a sequence from stored cut sets, e.g. a deserialized artifact.
pub fn from_cuts(
    tree: &SimplicialMetricTree,
    delta: Rational,
    normalize: bool,
    cuts: Vec<Vec<usize>>,
) -> Result<SubdivisionSequence, SubdivisionError> {
    validate_delta(&delta)?;
    let config = SubdivisionConfig {
        delta,
        n_max: cuts.len().saturating_sub(1),
        normalize,
    };
    let scale = if normalize {
        tree.diameter()
    } else {
        Dist::from_len(Rational::from_integer(1))
    };
    let k = cuts.len();
    assemble(
        tree,
        &config,
        scale,
        tree.heights(),
        cuts,
        vec![Vec::new(); k],
        vec![false; k],
    )
}

fn assemble(
    tree: &SimplicialMetricTree,
    config: &SubdivisionConfig,
    scale: Dist,
    heights: Vec<Dist>,
    cuts: Vec<Vec<usize>>,
    straddling: Vec<Vec<usize>>,
    limited: Vec<bool>,
) -> Result<SubdivisionSequence, SubdivisionError> {
    let levels: Vec<Decomposition> = par_iter!(cuts.clone())
        .map(|c| tree.decompose(&c))
        .collect::<Result<_, _>>()?;
    let parents = (0..levels.len())
        .map(|n| {
            if n == 0 {
                Vec::new()
            } else {
                levels[n]
                    .tiles
                    .iter()
                    .map(|t| levels[n - 1].edge_tile[t.edges[0]])
                    .collect()
            }
        })
        .collect();
    Ok(SubdivisionSequence {
        delta: config.delta,
        normalize: config.normalize,
        scale,
        heights,
        cuts,
        levels,
        parents,
        straddling,
        resolution_limited: limited,
    })
}

/// Where a property failed.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct Witness {
    pub level: usize,
    pub tile: usize,
    pub boundary: Vec<usize>,
    /// The relevant cut points (`𝒱_X`, or those on the open arc).
    pub points: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertiesReport {
    pub delta: String,
    pub levels: usize,
    /// `#𝒱ⁿ` and `#𝒳ⁿ` per level.
    pub cut_counts: Vec<usize>,
    pub tile_counts: Vec<usize>,
    /// `max #𝒱_X`.
    pub n_bound: usize,
    /// Properties (i)–(vii) in order.
    pub properties: Vec<PropertyCheck>,
    pub quasivisual: QvReport,
    pub visual: VisualReport,
    pub straddling: usize,
    pub resolution_limited: bool,
    pub pass: bool,
}

impl PropertiesReport {
    /// Property `(index)`, counted from 1.
    pub fn property(&self, index: usize) -> &PropertyCheck {
        &self.properties[index - 1]
    }

    /// Passes (iii)–(vii), the per-tile preconditions of the homeomorphism lemma.
    pub fn tile_preconditions_hold(&self) -> bool {
        self.properties[2..].iter().all(|p| p.pass)
    }
}

/// Verifies (i) finiteness, (ii) quasi-visuality, (iii) `#∂X ≤ 2`,
/// (iv) `𝒳_X` edge-like, (v) `#𝒱_X ≤ N`, (vi) `#𝒱_X ≥ 2`, and
/// (vii) at least three cut points of `𝒱_X` on `(u, v)` when `∂X = {u, v}`.
pub fn verify_decomposition_properties(
    tree: &SimplicialMetricTree,
    seq: &SubdivisionSequence,
) -> Result<PropertiesReport, SubdivisionError> {
    let n_max = seq.n_max();
    let cover = seq.cover(tree);
    let qv = check_quasivisual(&cover)?;
    let visual = check_visual(&cover, to_f64(&seq.delta), DRIFT_TOLERANCE)?;

    let first = |w: Vec<Witness>| w.into_iter().next();
    let boundary_fail: Vec<Witness> = (0..=n_max)
        .flat_map(|n| {
            seq.levels[n]
                .tiles
                .iter()
                .enumerate()
                .filter(|(_, t)| t.boundary.len() > 2)
                .map(move |(i, t)| Witness {
                    level: n,
                    tile: i,
                    boundary: t.boundary.clone(),
                    points: Vec::new(),
                })
        })
        .collect();

    struct TileFacts {
        witness: Witness,
        edge_like: bool,
        on_arc: Option<Vec<usize>>,
    }
    let facts: Vec<TileFacts> = (0..n_max)
        .flat_map(|n| (0..seq.levels[n].tiles.len()).map(move |i| (n, i)))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(n, i)| {
            let t = &seq.levels[n].tiles[i];
            let vx = seq.interior_cut(n, i);
            let edge_like = seq.children(n, i).iter().all(|&j| {
                seq.levels[n + 1].tiles[j]
                    .boundary
                    .iter()
                    .filter(|v| seq.cuts[n].binary_search(v).is_err())
                    .count()
                    <= 2
            });
            let on_arc = (t.boundary.len() == 2).then(|| {
                let path = tree.path(t.boundary[0], t.boundary[1]);
                path[1..path.len() - 1]
                    .iter()
                    .copied()
                    .filter(|v| vx.binary_search(v).is_ok())
                    .collect()
            });
            TileFacts {
                witness: Witness {
                    level: n,
                    tile: i,
                    boundary: t.boundary.clone(),
                    points: vx,
                },
                edge_like,
                on_arc,
            }
        })
        .collect();

    let n_bound = facts
        .iter()
        .map(|f| f.witness.points.len())
        .max()
        .unwrap_or(0);
    let not_edge_like = first(
        facts
            .iter()
            .filter(|f| !f.edge_like)
            .map(|f| f.witness.clone())
            .collect(),
    );
    let too_few = first(
        facts
            .iter()
            .filter(|f| f.witness.points.len() < 2)
            .map(|f| f.witness.clone())
            .collect(),
    );
    let thin_arc = first(
        facts
            .iter()
            .filter_map(|f| match &f.on_arc {
                Some(a) if a.len() < 3 => Some(Witness {
                    points: a.clone(),
                    ..f.witness.clone()
                }),
                _ => None,
            })
            .collect(),
    );

    let cut_counts: Vec<usize> = seq.cuts.iter().map(Vec::len).collect();
    let tile_counts: Vec<usize> = seq.levels.iter().map(|d| d.tiles.len()).collect();
    let properties = vec![
        PropertyCheck {
            name: "(i) finite cut sets",
            pass: true,
            detail: format!("#𝒱ⁿ = {cut_counts:?}"),
            witness: None,
        },
        PropertyCheck {
            name: "(ii) quasi-visual",
            pass: qv.pass,
            detail: format!(
                "c_i={:.4} c_ii={:?} c_iii={:.4} k0={:?} λ={:?}; visual drift={:.4}",
                qv.c_intersecting, qv.c_separated, qv.c_consecutive, qv.k0, qv.lambda, visual.drift
            ),
            witness: None,
        },
        PropertyCheck {
            name: "(iii) #∂X ≤ 2",
            pass: boundary_fail.is_empty(),
            detail: format!(
                "{} tiles with more than two boundary points",
                boundary_fail.len()
            ),
            witness: first(boundary_fail),
        },
        PropertyCheck {
            name: "(iv) 𝒳_X edge-like",
            pass: not_edge_like.is_none(),
            detail: String::new(),
            witness: not_edge_like,
        },
        PropertyCheck {
            name: "(v) #𝒱_X ≤ N",
            pass: true,
            detail: format!("N = {n_bound}"),
            witness: None,
        },
        PropertyCheck {
            name: "(vi) #𝒱_X ≥ 2",
            pass: too_few.is_none(),
            detail: String::new(),
            witness: too_few,
        },
        PropertyCheck {
            name: "(vii) three cut points on (u, v)",
            pass: thin_arc.is_none(),
            detail: String::new(),
            witness: thin_arc,
        },
    ];
    let pass = properties.iter().all(|p| p.pass);
    Ok(PropertiesReport {
        delta: fmt_rational(&seq.delta),
        levels: n_max + 1,
        cut_counts,
        tile_counts,
        n_bound,
        properties,
        quasivisual: qv,
        visual,
        straddling: seq.straddling.iter().map(Vec::len).sum(),
        resolution_limited: seq.resolution_limited.iter().any(|&b| b),
        pass,
    })
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub delta: Rational,
    pub sequence: SubdivisionSequence,
    pub report: PropertiesReport,
    /// Each tried δ with its failing properties.
    pub trail: Vec<(Rational, Vec<String>)>,
}

/// The largest δ of the grid whose subdivision passes (i)–(vii) through `n_max`.
pub fn calibrate_delta(
    tree: &SimplicialMetricTree,
    n_max: usize,
    grid: &[Rational],
    normalize: bool,
) -> Result<Calibration, SubdivisionError> {
    if grid.is_empty() {
        return Err(SubdivisionError::EmptyGrid);
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| b.cmp(a));
    grid.dedup();
    let heights = tree.heights();
    let mut trail = Vec::new();
    for delta in grid {
        let config = SubdivisionConfig {
            delta,
            n_max,
            normalize,
        };
        let seq = build_with_heights(tree, &config, heights.clone())?;
        let report = verify_decomposition_properties(tree, &seq)?;
        let failed: Vec<String> = report
            .properties
            .iter()
            .filter(|p| !p.pass)
            .map(|p| p.name.to_string())
            .collect();
        trail.push((delta, failed));
        if report.pass {
            return Ok(Calibration {
                delta,
                sequence: seq,
                report,
                trail,
            });
        }
    }
    Err(SubdivisionError::NoFeasibleDelta(
        trail
            .iter()
            .map(|(d, f)| format!("{}: {}", fmt_rational(d), f.join(", ")))
            .collect(),
    ))
}

/// The default δ grid `{1/2, 1/4, 1/8, 1/16}`.
pub fn default_grid() -> Vec<Rational> {
    (1..=4).map(|k| Rational::new(1, 1 << k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csst::build_jn;
    use crate::tree::tests::tripod;

    #[test]
    fn tripod_has_no_feasible_delta() {
        let t = tripod();
        assert!(matches!(
            calibrate_delta(&t, 2, &default_grid(), true),
            Err(SubdivisionError::NoFeasibleDelta(_))
        ));
    }

    #[test]
    fn rejects_bad_delta() {
        let t = tripod();
        let c = SubdivisionConfig::new(Rational::from_integer(1), 2);
        assert!(matches!(
            build_levels(&t, &c),
            Err(SubdivisionError::BadDelta(_))
        ));
    }

    #[test]
    fn level_zero_is_whole_tree() {
        let m = build_jn(4);
        let s = build_levels(&m.tree, &SubdivisionConfig::new(Rational::new(1, 4), 2)).unwrap();
        assert_eq!(s.levels[0].tiles.len(), 1);
        assert!(s
            .cuts
            .windows(2)
            .all(|w| w[0].iter().all(|v| w[1].contains(v))));
    }
}
