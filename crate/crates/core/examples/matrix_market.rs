//! Reading a MatrixMarket file and emitting the flag distribution as CSV.

use std::io::Cursor;

use seedvec::data::ElemKind;
use seedvec::ingest::parse_matrix_market;
use seedvec::plan::default_policy;
use seedvec::report::{cmd_analyze, spmv_workload, to_csv};
use seedvec::VectorShape;

const MTX: &str = "\
%%MatrixMarket matrix coordinate real symmetric
% a small banded matrix
6 6 11
1 1 4.0
2 1 -1.0
2 2 4.0
3 2 -1.0
3 3 4.0
4 3 -1.0
4 4 4.0
5 4 -1.0
5 5 4.0
6 5 -1.0
6 6 4.0
";

pub fn run_example() -> String {
    let m = parse_matrix_market(Cursor::new(MTX)).unwrap();
    println!("{}x{} with {} stored entries after symmetric expansion", m.rows, m.cols, m.nnz());
    let w = spmv_workload("banded", &m, ElemKind::Real64);
    let shape = VectorShape::new(4).unwrap();
    let report = cmd_analyze(&w, shape, &default_policy(shape)).unwrap();
    to_csv([&report])
}

fn main() {
    print!("{}", run_example());
}
