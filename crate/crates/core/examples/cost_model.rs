//! Lowered programs and their cost accounting, under the default policy
//! and with a custom cost table.

use seedvec::data::ElemKind;
use seedvec::ingest::gen_random;
use seedvec::plan::{cost_of, default_policy, CostReport, Plan};
use seedvec::{build_spmv_seed, VectorShape};

pub fn run_example() -> Vec<CostReport> {
    let m = gen_random(32, 32, 6, 9);
    let seed = build_spmv_seed(m.nnz());
    let bindings = m.spmv_bindings(ElemKind::Real64, &vec![1.0; 32]);
    let shape = VectorShape::new(8).unwrap();
    let mut model = default_policy(shape);
    model.apply_json(r#"{"costs": {"GATHER": 12}, "gather_threshold": 3}"#).unwrap();
    let plan = Plan::build(&seed, &bindings, shape, &model).unwrap();

    let reports: Vec<CostReport> = plan
        .dedup
        .classes
        .iter()
        .map(|c| cost_of(c, &seed, &model).unwrap())
        .collect();
    let busiest = plan.dedup.classes.iter().max_by_key(|c| c.members.len()).unwrap();
    println!("program for class {} ({} groups):", busiest.id, busiest.members.len());
    println!("{}", plan.programs[busiest.id].to_json());
    reports
}

fn main() {
    for r in run_example().iter().take(4) {
        let red = r.reduction.as_ref().unwrap();
        println!(
            "class {}: reduction steps {} (calc {} -> {}), gather flags {:?}, weighted cost {}",
            r.class,
            red.flag,
            red.original.calculations,
            red.optimized.calculations,
            r.gathers.iter().map(|g| g.flag).collect::<Vec<_>>(),
            r.weighted_cost
        );
    }
}
