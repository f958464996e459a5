//! Resolving write conflicts inside one group with shuffle-combine steps.

use std::collections::BTreeMap;

use seedvec::data::{ReduceOp, Scalar};
use seedvec::feature::{reduction_feature, VectorShape};
use seedvec::lanes::LaneMask;

pub fn run_example() -> BTreeMap<i64, Scalar> {
    let addrs = [3, 3, 1, 3, 1, 2, 2, 3];
    let values: Vec<Scalar> = (1..=8).map(Scalar::Int).collect();
    let shape = VectorShape::new(8).unwrap();
    let r = reduction_feature(&addrs, LaneMask::all(8), shape);
    println!("steps {}  representatives {}", r.flag, r.reps);
    for (k, s) in r.steps.iter().enumerate() {
        println!("  step {k}: perm {}  mask {}", s.perm, s.mask);
    }
    let out = r.apply(&values, ReduceOp::Add).unwrap();
    r.reps.lanes().map(|l| (addrs[l], out[l])).collect()
}

fn main() {
    for (addr, v) in run_example() {
        println!("y[{addr}] += {v}");
    }
}
