//! Acceptance gate. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any line fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seedvec::data::{Bindings, Buffer, ElemKind, ReduceOp, Scalar};
use seedvec::feature::{gather_feature, reduction_feature, VectorShape};
use seedvec::ingest::{default_x, gen_dense, CooMatrix, EdgeList};
use seedvec::lanes::{LaneMask, LanePerm};
use seedvec::plan::{cost_of, default_policy, predict_counts, predict_flush_counts, Opcode, Plan};
use seedvec::report::{cmd_analyze, spmv_workload, DistributionReport};
use seedvec::seed::{build_pagerank_seed_with, build_spmv_seed, build_spmv_seed_with, scalar_execute, CodeSeed, Combine, SeedBuilder, SiteKind};
use seedvec::verify::{diff_outputs, first_violation, oracle_group_fold, oracle_min_cover};
use seedvec::vvm::{execute_plan, run_plan, LaneVector};

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn shape(w: usize) -> VectorShape {
    VectorShape::new(w).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dense_distribution() -> Outcome {
    let m = gen_dense(2000, 2000);
    let w = spmv_workload("dense2000", &m, ElemKind::Real64);
    let r = cmd_analyze(&w, shape(8), &default_policy(shape(8))).map_err(|e| e.to_string())?;
    let g1 = DistributionReport::fraction(&r.gather, "1");
    let r3 = DistributionReport::fraction(&r.reduction, "3");
    ensure(g1 == 1.0 && r3 == 1.0, || format!("gather[1] = {g1}, reduction[3] = {r3}"))?;
    Ok(format!("{} groups, gather[1] = {g1}, reduction[3] = {r3}", r.groups))
}

fn two_window_gather() -> Outcome {
    let g = gather_feature(&[0, 4, 5, 1], LaneMask::all(4), 8, shape(4)).map_err(|e| e.to_string())?;
    ensure(g.flag == 2, || format!("flag {}", g.flag))?;
    ensure(g.perm == LanePerm::from_slice(&[0, 0, 1, 1]), || format!("perm {}", g.perm))?;
    ensure(g.masks.len() == 1 && g.masks[0].to_string() == "0110", || format!("masks {:?}", g.masks))?;

    let letters: Vec<Scalar> = "ABCDEFGH".chars().map(|c| Scalar::Int(c as i64)).collect();
    let win = |b: i64| LaneVector::from_scalars(&letters[b as usize..b as usize + 4]);
    let lanes = LaneVector::select(g.masks[0], &win(g.bases[1]).permute(g.perm), &win(g.bases[0]).permute(g.perm));
    let got: String = lanes.as_slice().iter().map(|s| s.as_int().unwrap() as u8 as char).collect();
    ensure(got == "AEFB", || format!("lane ops produced {got}"))?;

    // the same group through the full pipeline
    let mut b = SeedBuilder::new(4);
    b.access("idx").access("pos").input("data", ElemKind::Int64).output("out", ElemKind::Int64);
    let i = b.load("idx");
    let d = b.load_at("data", i);
    let p = b.load("pos");
    let seed = b.finish("out", p, d, Combine::Overwrite);
    let mut bind = Bindings::new();
    bind.insert("idx".into(), Buffer::Index(vec![0, 4, 5, 1]));
    bind.insert("pos".into(), Buffer::Index(vec![0, 1, 2, 3]));
    bind.insert("data".into(), Buffer::Int64(letters.iter().map(|s| s.as_int().unwrap()).collect()));
    bind.insert("out".into(), Buffer::zeros(ElemKind::Int64, 4));
    let stats = run_plan(&seed, &mut bind, shape(4), &default_policy(shape(4))).map_err(|e| e.to_string())?;
    let out: String = match &bind["out"] {
        Buffer::Int64(v) => v.iter().map(|&c| c as u8 as char).collect(),
        other => return Err(format!("unexpected output {other:?}")),
    };
    ensure(out == "AEFB", || format!("machine produced {out}"))?;
    ensure(
        stats.count(Opcode::Gather) == 0 && stats.count(Opcode::Select) == 1 && stats.count(Opcode::Permute) == 2,
        || format!("opcodes {:?}", stats.opcodes),
    )?;
    Ok("flag 2, perm [0,0,1,1], mask 0110, lanes AEFB".into())
}

fn exhaustive_cover() -> Outcome {
    let (w, n) = (4usize, 12i64);
    let mut checked = 0;
    for code in 0..n.pow(4) {
        let idx: Vec<i64> = (0..4).map(|k| code / n.pow(k) % n).collect();
        let g = gather_feature(&idx, LaneMask::all(w), n as usize, shape(w)).map_err(|e| e.to_string())?;
        let opt = oracle_min_cover(&idx, w).map_err(|e| e.to_string())?;
        ensure(g.flag == opt, || format!("{idx:?}: greedy {} vs optimum {opt}", g.flag))?;
        ensure(g.reconstruct() == idx, || format!("{idx:?}: lanes reconstruct to {:?}", g.reconstruct()))?;
        checked += 1;
    }
    Ok(format!("{checked} index vectors match the exact cover"))
}

fn random_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let cases = 10_000;
    for case in 0..cases {
        let w = [4, 8, 16][case % 3];
        let op = if case % 2 == 0 { ReduceOp::Add } else { ReduceOp::Mul };
        let active = rng.gen_range(1..=w);
        let spread = rng.gen_range(1..=w as i64);
        let addrs: Vec<i64> = (0..w).map(|_| rng.gen_range(0..spread)).collect();
        let values: Vec<Scalar> = (0..w).map(|_| Scalar::Int(rng.gen_range(-3..=3))).collect();
        let tail = LaneMask::prefix(w, active);
        let r = reduction_feature(&addrs, tail, shape(w));

        let mut mult: BTreeMap<i64, usize> = BTreeMap::new();
        for &a in &addrs[..active] {
            *mult.entry(a).or_default() += 1;
        }
        let max = *mult.values().max().unwrap();
        let expect_flag = max.next_power_of_two().trailing_zeros() as usize;
        ensure(r.flag == expect_flag, || {
            format!("case {case}: {addrs:?} active {active}: flag {} vs {expect_flag}", r.flag)
        })?;

        let folded = r.apply(&values, op).map_err(|e| e.to_string())?;
        let oracle = oracle_group_fold(&values[..active], &addrs[..active], op).map_err(|e| e.to_string())?;
        let got: BTreeMap<i64, Scalar> = r.reps.lanes().map(|l| (addrs[l], folded[l])).collect();
        ensure(got == oracle, || format!("case {case}: {addrs:?} {op:?}: {got:?} vs {oracle:?}"))?;
    }
    Ok(format!("{cases} cases over W in {{4,8,16}}, add and mul"))
}

struct Corpus {
    coo: Vec<CooMatrix>,
    edges: Vec<EdgeList>,
}

fn corpus() -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let coo = (0..1000)
        .map(|_| {
            let (rows, cols) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
            let nnz = rng.gen_range(1..=512);
            let t = (0..nnz)
                .map(|_| (rng.gen_range(0..rows), rng.gen_range(0..cols), rng.gen_range(-9..=9) as f64))
                .collect();
            CooMatrix::from_triplets(rows, cols, t)
        })
        .collect();
    let edges = (0..200)
        .map(|_| {
            let n = rng.gen_range(1..=256);
            let e = rng.gen_range(1..=2048);
            let pairs: Vec<(i64, i64)> = (0..e).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
            EdgeList::from_pairs(n as usize, pairs)
        })
        .collect();
    Corpus { coo, edges }
}

/// Every (seed, bindings) pair of the corpus at both element kinds.
fn workloads(c: &Corpus) -> Vec<(String, CodeSeed, Bindings)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0055);
    let mut out = Vec::new();
    for (i, m) in c.coo.iter().enumerate() {
        let seed = build_spmv_seed_with(m.nnz(), ElemKind::Int64);
        out.push((format!("coo{i}/int64"), seed, m.spmv_bindings(ElemKind::Int64, &default_x(m.cols))));
        let real = CooMatrix {
            values: m.values.iter().map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ..m.clone()
        };
        let x: Vec<f64> = (0..m.cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        out.push((format!("coo{i}/real64"), build_spmv_seed(m.nnz()), real.spmv_bindings(ElemKind::Real64, &x)));
    }
    for (i, e) in c.edges.iter().enumerate() {
        for kind in [ElemKind::Int64, ElemKind::Real64] {
            let seed = build_pagerank_seed_with(e.n_edges(), kind);
            out.push((format!("edges{i}/{kind}"), seed, e.pagerank_bindings(kind)));
        }
    }
    out
}

fn target_name(seed: &CodeSeed) -> String {
    seed.store.target.clone()
}

fn scalar_equivalence(work: &[(String, CodeSeed, Bindings)]) -> Outcome {
    let mut runs = 0;
    for w in [4, 8] {
        for (name, seed, bind) in work {
            let mut scalar = bind.clone();
            scalar_execute(seed, &mut scalar).map_err(|e| format!("{name}: scalar: {e}"))?;
            let mut vector = bind.clone();
            run_plan(seed, &mut vector, shape(w), &default_policy(shape(w))).map_err(|e| format!("{name} W={w}: {e}"))?;
            let t = target_name(seed);
            let (a, b) = (&vector[&t], &scalar[&t]);
            if name.ends_with("int64") {
                let d = diff_outputs(a, b).map_err(|e| e.to_string())?;
                ensure(d.is_exact(), || format!("{name} W={w}: first mismatch at {:?}", d.first_mismatch))?;
            } else {
                let v = first_violation(a, b, 1e-9, 1e-12).map_err(|e| e.to_string())?;
                ensure(v.is_none(), || format!("{name} W={w}: element {v:?} out of tolerance"))?;
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs: 1000 matrices and 200 graphs, W in {{4,8}}, int64 exact, real64 within 1e-9"))
}

fn static_costs(work: &[(String, CodeSeed, Bindings)]) -> Outcome {
    let mut classes = 0;
    for w in [4usize, 8] {
        let model = default_policy(shape(w));
        let log2w = w.trailing_zeros() as u64;
        let w64 = w as u64;
        for (name, seed, bind) in work {
            let plan = Plan::build(seed, bind, shape(w), &model).map_err(|e| format!("{name}: {e}"))?;
            if let Some(f) = &plan.flush {
                ensure(f.counts() == predict_flush_counts(shape(w), &model), || format!("{name} W={w}: flush counts"))?;
            }
            let bits = |k: ElemKind| k.size_bytes() as u64 * 8;
            let sites = seed.value_sites();
            for class in &plan.dedup.classes {
                let tag = format!("{name} W={w} class {}", class.id);
                let prog = &plan.programs[class.id];
                let predicted = predict_counts(&class.shape, seed, &model).map_err(|e| e.to_string())?;
                ensure(prog.counts() == predicted, || format!("{tag}: {:?} vs {predicted:?}", prog.counts()))?;

                let rep = cost_of(class, seed, &model).map_err(|e| e.to_string())?;
                ensure(rep.weighted_cost == model.weigh(&prog.counts()), || format!("{tag}: weighted cost"))?;
                if let (Some(r), Some(f)) = (&rep.reduction, &class.shape.reduction) {
                    let m = f.flag as u64;
                    let k = class.shape.distinct_writes as u64;
                    let db = bits(seed.value_kind().unwrap());
                    let o = (r.original.calculations, r.original.reductions, r.original.permutations);
                    let p = (r.optimized.calculations, r.optimized.reductions, r.optimized.permutations);
                    ensure(o == (w64, w64, 0) && p == (1, m, m), || format!("{tag}: counts {o:?} {p:?}"))?;
                    ensure(
                        r.original_index_bits == w64 * 64
                            && r.optimized_index_bits == k * 64
                            && r.optimized_data_bits == k * db
                            && r.optimized_store_bits == k * db
                            && r.additional_bits == m * w64 * log2w,
                        || format!("{tag}: reduction bits {r:?}"),
                    )?;
                    let profitable = m < (w64 - 1) + (w64 - m);
                    ensure(r.profitable == profitable, || format!("{tag}: reduction profitability"))?;
                }
                let indirect: Vec<_> = sites
                    .iter()
                    .zip(&class.shape.sites)
                    .enumerate()
                    .filter(|(_, (s, _))| s.kind == SiteKind::Indirect)
                    .collect();
                ensure(indirect.len() == rep.gathers.len(), || format!("{tag}: gather site count"))?;
                for ((site, (s, g)), gc) in indirect.into_iter().zip(&rep.gathers) {
                    ensure(gc.site == site && gc.flag == g.flag, || format!("{tag}: site {site}"))?;
                    let sb = bits(seed.decl(&s.array).unwrap().elem);
                    if g.is_replaceable() {
                        let m = g.flag as u64;
                        ensure(
                            gc.optimized_index_bits == m * 64
                                && gc.optimized_data_bits == m * w64 * sb
                                && gc.additional_bits == w64 * log2w + (m - 1) * w64,
                            || format!("{tag}: gather bits {gc:?}"),
                        )?;
                        let group = m + m + (m - 1);
                        let profitable = w64 * 64 - m * 64 > gc.additional_bits && group < w64;
                        ensure(gc.profitable == profitable, || format!("{tag}: gather profitability"))?;
                    } else {
                        ensure(gc.optimized_index_bits == w64 * 64 && gc.additional_bits == 0 && !gc.profitable, || {
                            format!("{tag}: irreplaceable site {gc:?}")
                        })?;
                    }
                }
                classes += 1;
            }
        }
    }
    Ok(format!("{classes} classes: lowered counts, flush counts and cost tables agree"))
}

fn dense_run_reductions() -> Outcome {
    let m = gen_dense(16, 16);
    let seed = build_spmv_seed_with(m.nnz(), ElemKind::Int64);
    let mut bind = m.spmv_bindings(ElemKind::Int64, &default_x(16));
    let plan = Plan::build(&seed, &bind, shape(8), &default_policy(shape(8))).map_err(|e| e.to_string())?;
    let stats = execute_plan(&plan, &mut bind).map_err(|e| e.to_string())?;
    ensure(stats.reduction_sequences == 16, || format!("{} reduction sequences", stats.reduction_sequences))?;
    Ok(format!("{} groups, {} reduction sequences", stats.groups, stats.reduction_sequences))
}

fn dense_uses_loads() -> Outcome {
    let m = gen_dense(64, 64);
    let seed = build_spmv_seed(m.nnz());
    let mut bind = m.spmv_bindings(ElemKind::Real64, &default_x(64));
    let stats = run_plan(&seed, &mut bind, shape(8), &default_policy(shape(8))).map_err(|e| e.to_string())?;
    let (g, v) = (stats.count(Opcode::Gather), stats.count(Opcode::Vload));
    ensure(g == 0 && v > 0, || format!("GATHER {g}, VLOAD {v}"))?;
    Ok(format!("GATHER {g}, VLOAD {v}"))
}

fn main() -> ExitCode {
    let c = corpus();
    let work = workloads(&c);
    let criteria: Vec<(&str, Check)> = vec![
        ("dense 2000x2000 flag distribution", Box::new(dense_distribution)),
        ("two-window gather replacement", Box::new(two_window_gather)),
        ("greedy cover is minimal", Box::new(exhaustive_cover)),
        ("reduction schedule", Box::new(random_reductions)),
        ("vector matches scalar", Box::new(|| scalar_equivalence(&work))),
        ("static cost accounting", Box::new(|| static_costs(&work))),
        ("one reduction per dense row", Box::new(dense_run_reductions)),
        ("dense gathers become loads", Box::new(dense_uses_loads)),
    ];
    let mut failed = 0;
    for (n, (title, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = check();
        let ms = t.elapsed().as_millis();
        match res {
            Ok(msg) => println!("PASS {}: {title}: {msg} ({ms} ms)", n + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {}: {title}: {msg} ({ms} ms)", n + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
