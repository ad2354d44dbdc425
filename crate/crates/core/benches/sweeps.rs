//! Parallel sweeps against a one-thread pool.
//!
//! Without the `parallel` feature both arms run the same sequential code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use csst_core::csst::csst_metrics;
use csst_core::homeo::refine_homeo;
use csst_core::par;
use csst_core::quasivisual::{check_quasivisual, fit_distortion, FnMetric, WordCover};
use csst_core::subdivision::{build_levels, verify_decomposition_properties, SubdivisionConfig};
use csst_core::{build_jn, Rational};

fn compare<R: Send>(c: &mut Criterion, name: &str, f: impl Fn() -> R + Sync) {
    let mut g = c.benchmark_group(name);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", ""), |b| b.iter(&f));
    g.bench_function(BenchmarkId::new("sequential", ""), |b| {
        b.iter(|| par::sequential(&f))
    });
    g.finish();
}

fn benches(c: &mut Criterion) {
    compare(c, "csst_metrics_5", || csst_metrics(5));

    compare(c, "word_cover_qv_5", || {
        check_quasivisual(&WordCover::standard(5)).unwrap()
    });

    let j8 = build_jn(8);
    let cfg = SubdivisionConfig::new(Rational::new(1, 4), 3);
    let seq = build_levels(&j8.tree, &cfg).unwrap();
    compare(c, "verify_properties_j8", || {
        verify_decomposition_properties(&j8.tree, &seq).unwrap()
    });

    let report = verify_decomposition_properties(&j8.tree, &seq).unwrap();
    compare(c, "refine_homeo_j8", || {
        refine_homeo(&j8.tree, &seq, &report, 3).unwrap()
    });

    let j5 = build_jn(5);
    let n = j5.tree.vertex_count();
    let d1 = FnMetric(n, |i, j| j5.tree.dist_f64(i, j));
    let d2 = FnMetric(n, |i, j| j5.tree.dist_f64(i, j).sqrt());
    compare(c, "fit_distortion_j5", || {
        fit_distortion(&d1, &d2, 200_000, 0).unwrap()
    });
}

criterion_group!(sweeps, benches);
criterion_main!(sweeps);
