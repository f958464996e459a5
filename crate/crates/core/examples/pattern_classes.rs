//! Feature table, pattern classes and same-address runs for a random matrix.

use seedvec::data::ElemKind;
use seedvec::feature::{build_feature_table, dedup_patterns, merge_same_address_runs, VectorShape};
use seedvec::ingest::gen_random;
use seedvec::build_spmv_seed;

pub struct Summary {
    pub groups: usize,
    pub classes: usize,
    pub runs: usize,
}

pub fn run_example() -> Summary {
    let m = gen_random(64, 64, 12, 42);
    let seed = build_spmv_seed(m.nnz());
    let bindings = m.spmv_bindings(ElemKind::Real64, &vec![1.0; 64]);
    let shape = VectorShape::new(4).unwrap();
    let mut table = build_feature_table(&seed, &bindings, shape).unwrap();
    let runs = merge_same_address_runs(&mut table);
    let dedup = dedup_patterns(&table);
    let mut classes: Vec<_> = dedup.classes.iter().collect();
    classes.sort_by_key(|c| std::cmp::Reverse(c.members.len()));
    for c in classes.iter().take(5) {
        let flags: Vec<usize> = c.shape.sites.iter().map(|s| s.flag).collect();
        println!(
            "class {:>3}  hash {:016x}  members {:>3}  load flags {:?}  reduction {}",
            c.id,
            c.hash,
            c.members.len(),
            flags,
            c.shape.reduction.as_ref().map_or(0, |r| r.flag)
        );
    }
    Summary {
        groups: table.len(),
        classes: dedup.classes.len(),
        runs: runs.iter().filter(|r| r.len > 1).count(),
    }
}

fn main() {
    let s = run_example();
    println!("{} groups, {} classes, {} multi-group runs", s.groups, s.classes, s.runs);
}
