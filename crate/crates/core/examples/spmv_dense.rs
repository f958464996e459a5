//! SpMV over a dense matrix: every gather becomes one contiguous load and
//! each row is reduced once, however many groups it spans.

use seedvec::data::{Buffer, ElemKind};
use seedvec::ingest::gen_dense;
use seedvec::plan::{default_policy, Opcode};
use seedvec::vvm::{run_plan, ExecStats};
use seedvec::{build_spmv_seed, VectorShape};

pub fn run_example() -> (Buffer, ExecStats) {
    let m = gen_dense(16, 64);
    let seed = build_spmv_seed(m.nnz());
    let mut bindings = m.spmv_bindings(ElemKind::Real64, &vec![1.0; 64]);
    let shape = VectorShape::new(8).unwrap();
    let stats = run_plan(&seed, &mut bindings, shape, &default_policy(shape)).expect("plan runs");
    (bindings.remove("y").unwrap(), stats)
}

fn main() {
    let (y, stats) = run_example();
    println!("y[0..4] = {:?}", &y.to_f64s()[..4]);
    println!(
        "groups {}  reductions {}  GATHER {}  VLOAD {}",
        stats.groups,
        stats.reduction_sequences,
        stats.count(Opcode::Gather),
        stats.count(Opcode::Vload)
    );
    println!("{}", stats.to_json());
}
