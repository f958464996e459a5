//! Inspector-executor specialization of irregular loop kernels.
//!
//! A kernel is described once as a [`seed::CodeSeed`]. The inspector reads
//! the immutable access arrays, splits the iteration space into groups of
//! `W` lanes and records how each group touches memory. Groups with the same
//! pattern share one [`plan::VectorProgram`] in which gathers become
//! contiguous loads plus lane shuffles and write conflicts become a short
//! shuffle-reduce tree. The [`vvm`] machine executes those programs and the
//! [`verify`] oracles check them against the scalar interpreter.

pub mod data;
pub mod feature;
pub mod ingest;
pub mod lanes;
pub mod plan;
pub mod report;
pub mod seed;
pub mod verify;
pub mod vvm;

pub use data::{Bindings, Buffer, ElemKind, ReduceOp, Scalar};
pub use feature::VectorShape;
pub use plan::{default_policy, CostModel, Plan};
pub use seed::{build_pagerank_seed, build_spmv_seed, scalar_execute, CodeSeed};
pub use vvm::{execute_plan, run_plan, ExecStats};
