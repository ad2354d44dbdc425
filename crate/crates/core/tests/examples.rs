//! Worked examples per module, against hand-derived or oracle-frozen values.

mod common;

use common::*;
use csst_core::csst::{branch_vertices, geodesic_distance, level_bound_check_jn};
use csst_core::generators::{make_model, ModelKind};
use csst_core::homeo::{
    build_tile_homeo, end_to_end, evaluate, refine_homeo, verify_isomorphism, HomeoError,
    PipelineConfig,
};
use csst_core::quasivisual::{check_quasivisual, check_visual, WordCover, DRIFT_TOLERANCE};
use csst_core::subdivision::{
    build_levels, calibrate_delta, default_grid, verify_decomposition_properties,
    SubdivisionConfig, SubdivisionError,
};
use csst_core::{
    apply_word, build_jn, tile_info, Anchor, CsstPoint, DyadicPoint, MetricMode, Rational,
    SimplicialMetricTree, TreePoint, Word,
};

fn w(s: &str) -> Word {
    s.parse().unwrap()
}

fn dy(re: Rational, im: Rational) -> DyadicPoint {
    DyadicPoint::from_rationals(&re, &im).unwrap()
}

fn one() -> Rational {
    Rational::from_integer(1)
}

fn segment() -> SimplicialMetricTree {
    SimplicialMetricTree::new(
        MetricMode::Geodesic,
        3,
        vec![(0, 1, one()), (1, 2, one())],
        None,
        vec![],
    )
    .unwrap()
}

fn unit_tripod() -> SimplicialMetricTree {
    let e = vec![(0, 1, one()), (0, 2, one()), (0, 3, one())];
    SimplicialMetricTree::new(MetricMode::Geodesic, 4, e, None, vec![]).unwrap()
}

fn vertex_at(t: &SimplicialMetricTree, p: DyadicPoint) -> usize {
    t.positions().unwrap().iter().position(|q| *q == p).unwrap()
}

#[test]
fn center_of_the_csst_ends() {
    let j = build_jn(3);
    let t = &j.tree;
    let [a, b, c] =
        [DyadicPoint::MINUS_ONE, DyadicPoint::ONE, DyadicPoint::I].map(|p| vertex_at(t, p));
    let rep = t
        .center(
            &TreePoint::Vertex(a),
            &TreePoint::Vertex(b),
            &TreePoint::Vertex(c),
        )
        .unwrap();
    assert_eq!(
        rep.center,
        TreePoint::Vertex(vertex_at(t, DyadicPoint::ZERO))
    );
}

#[test]
fn geometric_constants_examples() {
    let j = build_jn(6);
    let c = j.tree.geometric_constants(1_000_000, 0);
    assert_eq!(c.bounded_turning.unwrap().exact_sq, Some(one()));
    let sep = c.separation.unwrap();
    assert!(sep.exhaustive);
    assert_eq!(sep.exact_sq, Some(one()));
    let s = segment().geometric_constants(100, 0);
    assert!(s.separation.is_none());
    assert!(s.density.is_none());
}

#[test]
fn tile_info_examples() {
    let root = tile_info(&Word::empty());
    assert!(root.boundary.is_empty());
    assert_eq!(root.diam, Rational::from_integer(2));
    let t3 = tile_info(&w("3"));
    assert_eq!(t3.boundary, vec![DyadicPoint::ZERO]);
    assert_eq!(t3.diam, one());
    let t13 = tile_info(&w("13"));
    assert_eq!(t13.boundary, vec![dy(r(-1, 2), r(0, 1))]);
    assert_eq!(t13.diam, r(1, 2));
}

#[test]
fn branch_vertex_examples() {
    let b1 = branch_vertices(1, 1000).unwrap();
    assert_eq!(b1.len(), 1);
    assert_eq!((b1[0].point, b1[0].height), (DyadicPoint::ZERO, one()));
    let b2 = branch_vertices(2, 1000).unwrap();
    let pts: Vec<(DyadicPoint, Rational)> = b2.iter().map(|b| (b.point, b.height)).collect();
    for (p, h) in [
        (DyadicPoint::ZERO, one()),
        (dy(r(-1, 2), r(0, 1)), r(1, 2)),
        (dy(r(1, 2), r(0, 1)), r(1, 2)),
        (dy(r(0, 1), r(1, 2)), r(1, 2)),
    ] {
        assert!(pts.contains(&(p, h)));
    }
    assert_eq!(pts.len(), 4);
    for n in 1..=6 {
        assert_eq!(
            branch_vertices(n, 10_000).unwrap().len(),
            (3usize.pow(n as u32) - 1) / 2
        );
    }
    assert!(branch_vertices(10, 100).is_err());
}

#[test]
fn geodesic_examples() {
    let ends = geodesic_distance(
        &CsstPoint::new(Word::empty(), Anchor::Minus),
        &CsstPoint::new(Word::empty(), Anchor::Plus),
    );
    assert_eq!(ends, Rational::from_integer(2));
    let j3 = build_jn(3);
    let d0 = bfs_lengths(&j3.tree, j3.vertex_of_word(&Word::empty()).unwrap());
    let v1 = j3.vertex_of_word(&w("1")).unwrap();
    let v2 = j3.vertex_of_word(&w("2")).unwrap();
    assert_eq!(
        geodesic_distance(
            &CsstPoint::branch(Word::empty()),
            &CsstPoint::branch(w("1"))
        ),
        d0[v1]
    );
    assert_eq!(d0[v1], r(1, 2));
    let d1 = bfs_lengths(&j3.tree, v1);
    assert_eq!(
        geodesic_distance(&CsstPoint::branch(w("1")), &CsstPoint::branch(w("2"))),
        d1[v2]
    );
    assert_eq!(d1[v2], one());
}

#[test]
fn jn_examples() {
    let j0 = build_jn(0);
    assert_eq!(j0.tree.edge_count(), 2);
    assert_eq!(j0.tree.diameter().exact(), Some(Rational::from_integer(2)));
    let j1 = build_jn(1);
    assert_eq!(j1.tree.branch_points().len(), 1);
    for n in 0..=6 {
        let j = build_jn(n);
        assert_eq!(j.tree.edge_count(), 2 * 3usize.pow(n as u32));
        // recount from the segment words
        assert_eq!(j.edge_segment.len(), 2 * words_of_len(n).len());
    }
}

#[test]
fn level_bound_examples() {
    let j4 = build_jn(4);
    let one_cut = level_bound_check_jn(&j4, &[Word::empty()]).unwrap();
    assert!(one_cut.holds && one_cut.max_level == 1);
    let none = level_bound_check_jn(&j4, &[]).unwrap();
    assert!(none.holds && none.max_level == 0);
    let two = level_bound_check_jn(&j4, &[Word::empty(), w("1")]).unwrap();
    assert!(two.holds && two.max_level == 2);
    // the tiles are 𝒯_11, 𝒯_12, 𝒯_13, 𝒯_2, 𝒯_3
    let cut = [Word::empty(), w("1")].map(|u| j4.vertex_of_word(&u).unwrap());
    let dec = j4.tree.decompose(&cut).unwrap();
    let mut words: Vec<String> = dec
        .tiles
        .iter()
        .map(|t| j4.tile_word(t).unwrap().to_string())
        .collect();
    words.sort();
    assert_eq!(words, ["11", "12", "13", "2", "3"]);
}

#[test]
fn quasivisual_examples() {
    let cover = WordCover::standard(5);
    let rep = check_quasivisual(&cover).unwrap();
    assert!(rep.pass);
    assert_eq!(rep.c_intersecting, 1.0);
    let single = check_quasivisual(&WordCover::new(vec![vec![Word::empty()]])).unwrap();
    assert!(single.pass);
    assert_eq!((single.c_intersecting, single.c_consecutive), (1.0, 1.0));
    // level 2 repeats level 1: no shrinking
    let l1 = vec![w("1"), w("2"), w("3")];
    let stuck =
        check_quasivisual(&WordCover::new(vec![vec![Word::empty()], l1.clone(), l1])).unwrap();
    assert!(
        stuck.pass,
        "k0 = 1 already certifies shrinking from level 0 to 1"
    );
    let flat = WordCover::new(vec![
        vec![Word::empty()],
        vec![Word::empty()],
        vec![Word::empty()],
    ]);
    let flat = check_quasivisual(&flat).unwrap();
    assert!(!flat.pass && flat.k0.is_none());
    let vis = check_visual(&cover, 0.5, DRIFT_TOLERANCE).unwrap();
    assert!(vis.pass && vis.quasivisual.pass);
    assert!((vis.c_diam_high - 2.0).abs() < 1e-12);
    assert!(!check_visual(&cover, 0.9, DRIFT_TOLERANCE).unwrap().pass);
}

#[test]
fn subdivision_examples_unnormalized() {
    let j8 = build_jn(8);
    let cfg = SubdivisionConfig {
        delta: r(1, 2),
        n_max: 1,
        normalize: false,
    };
    let seq = build_levels(&j8.tree, &cfg).unwrap();
    let mut got: Vec<DyadicPoint> = seq.cuts[1].iter().map(|&v| j8.points[v]).collect();
    got.sort();
    let mut want = vec![
        DyadicPoint::ZERO,
        dy(r(-1, 2), r(0, 1)),
        dy(r(1, 2), r(0, 1)),
        dy(r(0, 1), r(1, 2)),
    ];
    want.sort();
    assert_eq!(got, want);

    let j6 = build_jn(6);
    let half = build_levels(
        &j6.tree,
        &SubdivisionConfig {
            delta: r(1, 2),
            n_max: 2,
            normalize: false,
        },
    )
    .unwrap();
    let rep = verify_decomposition_properties(&j6.tree, &half).unwrap();
    assert!(rep.property(1).pass && rep.property(2).pass && rep.property(3).pass);
    let wit = rep.property(7).witness.clone().unwrap();
    assert_eq!(wit.level, 1);
    let mut bd: Vec<DyadicPoint> = wit.boundary.iter().map(|&v| j6.points[v]).collect();
    bd.sort();
    let mut want = vec![dy(r(-1, 2), r(0, 1)), DyadicPoint::ZERO];
    want.sort();
    assert_eq!(bd, want);
    let pts: Vec<DyadicPoint> = wit.points.iter().map(|&v| j6.points[v]).collect();
    assert_eq!(pts, vec![apply_word(&w("12"), DyadicPoint::ZERO)]);

    let eighth = build_levels(
        &j6.tree,
        &SubdivisionConfig {
            delta: r(1, 8),
            n_max: 2,
            normalize: false,
        },
    )
    .unwrap();
    assert!(
        verify_decomposition_properties(&j6.tree, &eighth)
            .unwrap()
            .pass
    );
}

#[test]
fn subdivision_examples_small_trees() {
    let seg = build_levels(&segment(), &SubdivisionConfig::new(r(1, 2), 3)).unwrap();
    assert!(seg.cuts.iter().all(Vec::is_empty));
    assert!(seg.levels.iter().all(|d| d.tiles.len() == 1));
    let tri = build_levels(&unit_tripod(), &SubdivisionConfig::new(r(1, 2), 1)).unwrap();
    assert_eq!(tri.cuts[1], vec![0]);
    assert_eq!(tri.levels[1].tiles.len(), 3);
    let rep = verify_decomposition_properties(&unit_tripod(), &tri).unwrap();
    assert!(!rep.property(6).pass);
    assert!(matches!(
        calibrate_delta(&unit_tripod(), 1, &default_grid(), true),
        Err(SubdivisionError::NoFeasibleDelta(_))
    ));
}

#[test]
fn calibration_is_idempotent_under_duplicates() {
    let t = build_jn(6).tree;
    let a = calibrate_delta(&t, 2, &[r(1, 2), r(1, 4), r(1, 8)], true).unwrap();
    let b = calibrate_delta(&t, 2, &[r(1, 2), r(1, 4), r(1, 4), r(1, 8)], true).unwrap();
    assert_eq!(a.delta, b.delta);
    assert_eq!(a.delta, r(1, 4));
}

#[test]
fn tile_homeo_examples() {
    let h = build_tile_homeo(&unit_tripod(), None, &[0], &[]).unwrap();
    let mut words: Vec<String> = h.tiles.iter().map(|(_, u)| u.to_string()).collect();
    words.sort();
    assert_eq!(words, ["1", "2", "3"]);
    assert_eq!(h.vertex_words, vec![(0, Word::empty())]);
    let empty = build_tile_homeo(&unit_tripod(), None, &[], &[]).unwrap();
    assert_eq!(empty.tiles.len(), 1);
    assert!(empty.tiles[0].1.is_empty());

    // a spine 0-1-2-3-4 with leaves 5, 6, 7 at 1, 2, 3
    let e = vec![
        (0, 1, one()),
        (1, 2, one()),
        (2, 3, one()),
        (3, 4, one()),
        (1, 5, one()),
        (2, 6, one()),
        (3, 7, one()),
    ];
    let t = SimplicialMetricTree::new(MetricMode::Geodesic, 8, e, None, vec![]).unwrap();
    let h = build_tile_homeo(
        &t,
        None,
        &[1, 2, 3],
        &[(0, Anchor::Minus), (4, Anchor::Plus)],
    )
    .unwrap();
    let img = |v: usize| {
        apply_word(
            &h.vertex_words.iter().find(|x| x.0 == v).unwrap().1,
            DyadicPoint::ZERO,
        )
    };
    assert_eq!(img(1), dy(r(-1, 2), r(0, 1)));
    assert_eq!(img(3), dy(r(1, 2), r(0, 1)));
    let word_of_edge = |e: usize| {
        h.tiles
            .iter()
            .find(|(es, _)| es.contains(&e))
            .unwrap()
            .1
            .to_string()
    };
    assert_eq!(word_of_edge(0), "11");
    assert_eq!(word_of_edge(3), "22");
    assert!(matches!(
        build_tile_homeo(
            &t,
            None,
            &[1, 2, 3],
            &[(0, Anchor::Minus), (4, Anchor::Minus)]
        ),
        Err(HomeoError::BadMarks(_))
    ));
}

fn csst_refinement(
    levels: usize,
) -> (
    SimplicialMetricTree,
    csst_core::subdivision::SubdivisionSequence,
    csst_core::homeo::TileHomeomorphism,
) {
    let t = build_jn(8).tree;
    let seq = build_levels(&t, &SubdivisionConfig::new(r(1, 4), levels)).unwrap();
    let rep = verify_decomposition_properties(&t, &seq).unwrap();
    let h = refine_homeo(&t, &seq, &rep, levels).unwrap();
    (t, seq, h)
}

#[test]
fn refinement_examples() {
    let (_, seq, h) = csst_refinement(2);
    assert_eq!(h.words[0], vec![Word::empty()]);
    let nv = seq.cuts[1].len();
    assert!(h.words[1].iter().all(|u| (1..=nv).contains(&u.len())));
    assert!(h.checks_pass());
    assert!(verify_isomorphism(&seq, &h).pass);

    let mut zero = h.clone();
    zero.words.truncate(1);
    assert!(verify_isomorphism(&seq, &zero).pass);

    // swap two sibling words at level 1 only
    let mut bad = h.clone();
    let kids = seq.children(0, 0);
    bad.words[1].swap(kids[0], kids[1]);
    let rep = verify_isomorphism(&seq, &bad);
    assert!(!rep.pass);
    assert!(
        rep.failures.iter().any(|f| f.contains("containment")),
        "{:?}",
        rep.failures
    );
}

#[test]
fn refine_refuses_unverified_sequences() {
    let t = build_jn(6).tree;
    let seq = build_levels(&t, &SubdivisionConfig::new(r(1, 2), 2)).unwrap();
    let rep = verify_decomposition_properties(&t, &seq).unwrap();
    assert!(matches!(
        refine_homeo(&t, &seq, &rep, 2),
        Err(HomeoError::PreconditionNotVerified(_))
    ));
}

#[test]
fn evaluation_examples() {
    let (_, seq, h) = csst_refinement(3);
    let root = evaluate(&seq, &h, &TreePoint::Vertex(0), 0).unwrap();
    assert_eq!(root.approx, DyadicPoint::ZERO);
    assert_eq!(root.error_bound, Rational::from_integer(2));
    let v = seq.cuts[1][0];
    let images: Vec<DyadicPoint> = (1..=3)
        .map(|d| {
            evaluate(&seq, &h, &TreePoint::Vertex(v), d)
                .unwrap()
                .exact
                .unwrap()
        })
        .collect();
    assert!(images.windows(2).all(|p| p[0] == p[1]));
    let bounds: Vec<Rational> = (1..=3)
        .map(|d| {
            evaluate(&seq, &h, &TreePoint::Vertex(v), d)
                .unwrap()
                .error_bound
        })
        .collect();
    assert!(bounds.windows(2).all(|b| b[1] < b[0]));
    assert!(matches!(
        evaluate(&seq, &h, &TreePoint::Vertex(v), 4),
        Err(HomeoError::DepthExceeded { .. })
    ));
    // points in disjoint depth-3 tiles land in disjoint word tiles
    let lvl = &seq.levels[3];
    let (a, b) = (0..lvl.tiles.len())
        .flat_map(|i| (i + 1..lvl.tiles.len()).map(move |j| (i, j)))
        .find(|&(i, j)| {
            lvl.tiles[i]
                .boundary
                .iter()
                .all(|x| !lvl.tiles[j].boundary.contains(x))
        })
        .unwrap();
    let pa = TreePoint::Interior {
        edge: lvl.tiles[a].edges[0],
        t: r(1, 2),
    };
    let pb = TreePoint::Interior {
        edge: lvl.tiles[b].edges[0],
        t: r(1, 2),
    };
    let (ea, eb) = (
        evaluate(&seq, &h, &pa, 3).unwrap(),
        evaluate(&seq, &h, &pb, 3).unwrap(),
    );
    assert!(!csst_core::csst::tiles_intersect(&ea.word, &eb.word));
}

#[test]
fn pipeline_on_segment_fails_at_calibration() {
    let cfg = PipelineConfig {
        grid: default_grid(),
        n_max: 2,
        normalize: true,
        triple_budget: 1000,
        seed: 0,
    };
    assert!(matches!(
        end_to_end(&segment(), &cfg),
        Err(HomeoError::Subdivision(SubdivisionError::NoFeasibleDelta(
            _
        )))
    ));
}

#[test]
fn perturbed_pipeline_has_larger_distortion() {
    let cfg = PipelineConfig {
        grid: default_grid(),
        n_max: 2,
        normalize: true,
        triple_budget: 20_000,
        seed: 0,
    };
    let base = end_to_end(&build_jn(6).tree, &cfg).unwrap();
    let t = make_model(&ModelKind::Perturbed {
        n: 6,
        lo: one(),
        hi: Rational::from_integer(2),
        seed: 3,
    })
    .unwrap();
    let pert = end_to_end(&t, &cfg).unwrap();
    assert!(base.pass(), "{:?}", base.stages);
    assert!(pert.pass(), "{:?}", pert.stages);
    assert!(pert.distortion.k.is_finite() && base.distortion.k.is_finite());
    assert!(
        pert.distortion.k > base.distortion.k,
        "{} vs {}",
        pert.distortion.k,
        base.distortion.k
    );
}
