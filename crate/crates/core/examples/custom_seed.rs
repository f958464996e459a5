//! Writing a kernel directly in the seed language: a weighted histogram
//! with a subtracting update, rewritten internally into an add reduction.

use seedvec::data::{BinOpKind, Bindings, Buffer, ElemKind};
use seedvec::plan::default_policy;
use seedvec::seed::SeedBuilder;
use seedvec::vvm::run_plan;
use seedvec::{scalar_execute, VectorShape};

pub fn run_example() -> (Buffer, Buffer) {
    let n = 37;
    let mut b = SeedBuilder::new(n);
    b.access("bucket").input("weight", ElemKind::Int64).output("hist", ElemKind::Int64);
    let at = b.load("bucket");
    let w = b.load("weight");
    let seed = b.finish_reduction("hist", at, w, BinOpKind::Sub).unwrap();

    let mut bindings = Bindings::new();
    bindings.insert("bucket".into(), Buffer::Index((0..n as i64).map(|i| (i * i) % 5).collect()));
    bindings.insert("weight".into(), Buffer::Int64((0..n as i64).map(|i| i % 7 + 1).collect()));
    bindings.insert("hist".into(), Buffer::Int64(vec![100; 5]));

    let mut scalar = bindings.clone();
    scalar_execute(&seed, &mut scalar).unwrap();
    let shape = VectorShape::new(8).unwrap();
    run_plan(&seed, &mut bindings, shape, &default_policy(shape)).unwrap();
    (bindings.remove("hist").unwrap(), scalar.remove("hist").unwrap())
}

fn main() {
    let (vector, scalar) = run_example();
    println!("vector: {vector:?}");
    println!("scalar: {scalar:?}");
}
