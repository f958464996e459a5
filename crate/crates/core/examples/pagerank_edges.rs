//! One PageRank accumulation pass over an edge list, checked against the
//! scalar interpreter.

use std::io::Cursor;

use seedvec::data::ElemKind;
use seedvec::ingest::parse_edge_list_inferred;
use seedvec::plan::default_policy;
use seedvec::verify::{diff_outputs, Deviation};
use seedvec::vvm::run_plan;
use seedvec::{build_pagerank_seed, scalar_execute, VectorShape};

const EDGES: &str = "\
# src dst
0 1
0 2
1 2
2 0
3 0
3 1
3 2
4 3
5 3
6 3
";

pub fn run_example() -> Deviation {
    let edges = parse_edge_list_inferred(Cursor::new(EDGES)).unwrap();
    let seed = build_pagerank_seed(edges.n_edges());
    let mut vector = edges.pagerank_bindings(ElemKind::Real64);
    let mut scalar = vector.clone();
    scalar_execute(&seed, &mut scalar).unwrap();
    let shape = VectorShape::new(4).unwrap();
    let stats = run_plan(&seed, &mut vector, shape, &default_policy(shape)).unwrap();
    println!("sum = {:?}", vector["sum"].to_f64s());
    println!("groups {}  reduction sequences {}", stats.groups, stats.reduction_sequences);
    diff_outputs(&vector["sum"], &scalar["sum"]).unwrap()
}

fn main() {
    let d = run_example();
    println!("max relative deviation from scalar: {:e}", d.max_rel);
}
