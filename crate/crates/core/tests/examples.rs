//! Every example compiles as a module here and its result is checked.

#![allow(dead_code)]

use seedvec::data::{Buffer, Scalar};
use seedvec::plan::Opcode;
use seedvec::report::parse_csv;

#[path = "../examples/spmv_dense.rs"]
mod spmv_dense;
#[path = "../examples/gather_window.rs"]
mod gather_window;
#[path = "../examples/reduction_schedule.rs"]
mod reduction_schedule;
#[path = "../examples/pagerank_edges.rs"]
mod pagerank_edges;
#[path = "../examples/pattern_classes.rs"]
mod pattern_classes;
#[path = "../examples/matrix_market.rs"]
mod matrix_market;
#[path = "../examples/cost_model.rs"]
mod cost_model;
#[path = "../examples/custom_seed.rs"]
mod custom_seed;

#[test]
fn spmv_dense_rows() {
    let (y, stats) = spmv_dense::run_example();
    let m = seedvec::ingest::gen_dense(16, 64);
    let mut expect = vec![0.0; 16];
    for (r, _, v) in m.triplets() {
        expect[r] += v;
    }
    assert_eq!(y, Buffer::Real64(expect));
    assert_eq!(stats.count(Opcode::Gather), 0);
    assert_eq!(stats.reduction_sequences, 16);
}

#[test]
fn gather_window_lanes() {
    assert_eq!(gather_window::run_example(), vec!['A', 'E', 'F', 'B']);
}

#[test]
fn reduction_schedule_sums() {
    let got = reduction_schedule::run_example();
    let expect = [(1, 8), (2, 13), (3, 15)].map(|(a, v)| (a, Scalar::Int(v)));
    assert_eq!(got.into_iter().collect::<Vec<_>>(), expect);
}

#[test]
fn pagerank_edges_agree() {
    assert_eq!(pagerank_edges::run_example().max_abs, 0.0);
}

#[test]
fn pattern_classes_summary() {
    let s = pattern_classes::run_example();
    assert_eq!(s.groups, 64 * 12 / 4);
    assert!(s.classes > 1 && s.classes < s.groups);
    assert_eq!(s.runs, 64);
}

#[test]
fn matrix_market_csv() {
    let rows = parse_csv(&matrix_market::run_example()).unwrap();
    let total: f64 = rows.iter().filter(|r| r.site_kind == "reduction").map(|r| r.fraction).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(rows.iter().all(|r| r.dataset == "banded"));
}

#[test]
fn cost_model_reports() {
    let reports = cost_model::run_example();
    assert!(!reports.is_empty());
    for r in &reports {
        let red = r.reduction.as_ref().unwrap();
        assert_eq!(red.optimized.reductions, red.flag as u64);
        assert!(r.gathers.iter().all(|g| !g.replaced || g.flag <= 3));
    }
}

#[test]
fn custom_seed_matches_scalar() {
    let (vector, scalar) = custom_seed::run_example();
    assert_eq!(vector, scalar);
}
