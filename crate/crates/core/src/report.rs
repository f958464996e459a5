//! Dataset-level reports and the operations behind the command line:
//! analyze, verify, run, corpus and gen.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{fnv1a64, Bindings, ElemKind};
use crate::feature::{FeatureColumn, VectorShape};
use crate::ingest::{
    default_x, gen_dense, gen_random, parse_edge_list, parse_edge_list_inferred, read_matrix_market,
    write_matrix_market, CooMatrix, EdgeList, ParseError,
};
use crate::plan::{CostModel, OpCounts, Plan, PlanError};
use crate::seed::{build_pagerank_seed_with, build_spmv_seed_with, scalar_execute, CodeSeed, ExecError, SiteKind};
use crate::verify::{diff_outputs, first_violation, Deviation, OracleError};
use crate::vvm::{execute_plan, ExecStats, VmError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Spmv,
    Pagerank,
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spmv" => Ok(Kernel::Spmv),
            "pagerank" => Ok(Kernel::Pagerank),
            _ => Err(format!("unknown kernel `{s}` (expected spmv or pagerank)")),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Spmv => "spmv",
            Kernel::Pagerank => "pagerank",
        })
    }
}

/// A dataset on disk or a generator spec: `dense:RxC` or `random:RxC:K:SEED`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    File(PathBuf),
    Dense { rows: usize, cols: usize },
    Random { rows: usize, cols: usize, per_row: usize, seed: u64 },
}

fn parse_dims(s: &str) -> Option<(usize, usize)> {
    let (r, c) = s.split_once('x')?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

impl FromStr for InputSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad generator spec `{s}` (expected dense:RxC or random:RxC:K:SEED)");
        if let Some(rest) = s.strip_prefix("dense:") {
            let (rows, cols) = parse_dims(rest).ok_or_else(bad)?;
            return Ok(InputSource::Dense { rows, cols });
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let [dims, k, seed] = parts[..] else {
                return Err(bad());
            };
            let (rows, cols) = parse_dims(dims).ok_or_else(bad)?;
            let per_row: usize = k.parse().map_err(|_| bad())?;
            if per_row > cols {
                return Err(format!("{per_row} entries per row exceed {cols} columns"));
            }
            return Ok(InputSource::Random {
                rows,
                cols,
                per_row,
                seed: seed.parse().map_err(|_| bad())?,
            });
        }
        Ok(InputSource::File(PathBuf::from(s)))
    }
}

impl InputSource {
    pub fn name(&self) -> String {
        match self {
            InputSource::File(p) => p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
            InputSource::Dense { rows, cols } => format!("dense-{rows}x{cols}"),
            InputSource::Random {
                rows,
                cols,
                per_row,
                seed,
            } => format!("random-{rows}x{cols}-{per_row}-{seed}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 3,
            _ => 2,
        }
    }
}

/// A seed together with the arrays it runs over.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub kernel: Kernel,
    pub seed: CodeSeed,
    pub bindings: Bindings,
}

pub fn spmv_workload(name: &str, m: &CooMatrix, kind: ElemKind) -> Workload {
    Workload {
        name: name.to_string(),
        kernel: Kernel::Spmv,
        seed: build_spmv_seed_with(m.nnz(), kind),
        bindings: m.spmv_bindings(kind, &default_x(m.cols)),
    }
}

pub fn pagerank_workload(name: &str, e: &EdgeList, kind: ElemKind) -> Workload {
    Workload {
        name: name.to_string(),
        kernel: Kernel::Pagerank,
        seed: build_pagerank_seed_with(e.n_edges(), kind),
        bindings: e.pagerank_bindings(kind),
    }
}

fn is_matrix_market(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "mtx")
}

/// Loads a dataset. PageRank reads `.mtx` files as adjacency matrices and
/// anything else as a `src dst` edge list.
pub fn load_workload(
    src: &InputSource,
    kernel: Kernel,
    kind: ElemKind,
    vertices: Option<usize>,
) -> Result<Workload, CliError> {
    let name = src.name();
    let parse_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| CliError::Parse { path, source }
    };
    let matrix = match src {
        InputSource::Dense { rows, cols } => gen_dense(*rows, *cols),
        InputSource::Random {
            rows,
            cols,
            per_row,
            seed,
        } => gen_random(*rows, *cols, *per_row, *seed),
        InputSource::File(p) if kernel == Kernel::Pagerank && !is_matrix_market(p) => {
            let f = fs::File::open(p).map_err(|source| CliError::Io {
                path: p.display().to_string(),
                source,
            })?;
            let r = BufReader::new(f);
            let e = match vertices {
                Some(n) => parse_edge_list(r, n),
                None => parse_edge_list_inferred(r),
            }
            .map_err(parse_err(p))?;
            return Ok(pagerank_workload(&name, &e, kind));
        }
        InputSource::File(p) => read_matrix_market(p).map_err(parse_err(p))?,
    };
    Ok(match kernel {
        Kernel::Spmv => spmv_workload(&name, &matrix, kind),
        Kernel::Pagerank => pagerank_workload(&name, &matrix.to_edge_list(), kind),
    })
}

/// One histogram bin: a flag value (`1`, `2`, ... or `irreplaceable`) and
/// the fraction of sites that have it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub flag: String,
    pub fraction: f64,
}

pub const IRREPLACEABLE: &str = "irreplaceable";

/// Per-site cost quantities summed over every group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostAggregate {
    pub gather_sites: u64,
    pub gathers_replaced: u64,
    pub gathers_profitable: u64,
    pub original_index_bits: u64,
    pub optimized_index_bits: u64,
    pub additional_bits: u64,
    pub reduction_original: Option<OpCounts>,
    pub reduction_optimized: Option<OpCounts>,
    pub reduction_additional_bits: u64,
    /// Sum over groups of the weighted static cost of the group's program.
    pub weighted_cost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub schema: u32,
    pub dataset: String,
    pub kernel: Kernel,
    pub width: usize,
    pub groups: usize,
    pub classes: usize,
    /// Indirect loads, by window count.
    pub gather: Vec<Bin>,
    /// Store addresses, by window count.
    pub scatter: Vec<Bin>,
    pub combined: Vec<Bin>,
    /// Reduction steps `0..=log2 W`; empty for overwrite kernels.
    pub reduction: Vec<Bin>,
    pub cost: CostAggregate,
}

fn histogram(counts: &[u64], labels: impl Fn(usize) -> String) -> Vec<Bin> {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| Bin {
            flag: labels(k),
            fraction: if total == 0 { 0.0 } else { c as f64 / total as f64 },
        })
        .collect()
}

fn flag_label(width: usize) -> impl Fn(usize) -> String {
    move |k| {
        if k < width {
            (k + 1).to_string()
        } else {
            IRREPLACEABLE.to_string()
        }
    }
}

/// Index `flag - 1`, with the irreplaceable flag `W + 1` landing in slot `W`.
fn flag_slot(flag: usize) -> usize {
    flag - 1
}

impl DistributionReport {
    pub fn from_plan(name: &str, kernel: Kernel, seed: &CodeSeed, plan: &Plan) -> Result<Self, PlanError> {
        let w = plan.shape.width();
        let kinds: Vec<SiteKind> = seed.value_sites().iter().map(|s| s.kind).collect();
        let mut gather = vec![0u64; w + 1];
        let mut scatter = vec![0u64; w + 1];
        let mut reduction = vec![0u64; plan.shape.log2() + 1];
        let mut has_reduction = false;
        for col in &plan.table {
            tally(col, &kinds, &mut gather, &mut scatter, &mut reduction, &mut has_reduction);
        }
        let combined: Vec<u64> = gather.iter().zip(&scatter).map(|(a, b)| a + b).collect();

        let mut cost = CostAggregate::default();
        for (class, report) in plan.dedup.classes.iter().zip(plan.cost_reports(seed)?) {
            let n = class.members.len() as u64;
            cost.weighted_cost += n * report.weighted_cost;
            for g in &report.gathers {
                cost.gather_sites += n;
                cost.gathers_replaced += n * g.replaced as u64;
                cost.gathers_profitable += n * g.profitable as u64;
                cost.original_index_bits += n * g.original_index_bits;
                cost.optimized_index_bits += n * g.optimized_index_bits;
                cost.additional_bits += n * g.additional_bits;
            }
            if let Some(r) = report.reduction {
                let add = |acc: &mut Option<OpCounts>, c: OpCounts| {
                    let a = acc.get_or_insert(OpCounts {
                        calculations: 0,
                        reductions: 0,
                        permutations: 0,
                    });
                    a.calculations += n * c.calculations;
                    a.reductions += n * c.reductions;
                    a.permutations += n * c.permutations;
                };
                add(&mut cost.reduction_original, r.original);
                add(&mut cost.reduction_optimized, r.optimized);
                cost.reduction_additional_bits += n * r.additional_bits;
            }
        }

        Ok(DistributionReport {
            schema: SCHEMA_VERSION,
            dataset: name.to_string(),
            kernel,
            width: w,
            groups: plan.table.len(),
            classes: plan.dedup.classes.len(),
            gather: histogram(&gather, flag_label(w)),
            scatter: histogram(&scatter, flag_label(w)),
            combined: histogram(&combined, flag_label(w)),
            reduction: if has_reduction {
                histogram(&reduction, |k| k.to_string())
            } else {
                Vec::new()
            },
            cost,
        })
    }

    /// Fraction in `bins` for a flag label.
    pub fn fraction(bins: &[Bin], flag: &str) -> f64 {
        bins.iter().find(|b| b.flag == flag).map_or(0.0, |b| b.fraction)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let kinds = [
            ("gather", &self.gather),
            ("scatter", &self.scatter),
            ("combined", &self.combined),
            ("reduction", &self.reduction),
        ];
        kinds
            .into_iter()
            .flat_map(|(kind, bins)| {
                bins.iter().map(move |b| CsvRow {
                    dataset: self.dataset.clone(),
                    site_kind: kind.to_string(),
                    flag: b.flag.clone(),
                    fraction: b.fraction,
                })
            })
            .collect()
    }
}

fn tally(
    col: &FeatureColumn,
    kinds: &[SiteKind],
    gather: &mut [u64],
    scatter: &mut [u64],
    reduction: &mut [u64],
    has_reduction: &mut bool,
) {
    for (site, kind) in col.sites.iter().zip(kinds) {
        if *kind == SiteKind::Indirect {
            gather[flag_slot(site.gather.flag)] += 1;
        }
    }
    scatter[flag_slot(col.write.window.flag)] += 1;
    if let Some(r) = &col.write.reduction {
        *has_reduction = true;
        reduction[r.flag] += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub dataset: String,
    pub site_kind: String,
    pub flag: String,
    pub fraction: f64,
}

pub const CSV_HEADER: &str = "dataset,site_kind,flag,fraction";

pub fn to_csv<'a>(reports: impl IntoIterator<Item = &'a DistributionReport>) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        for row in r.csv_rows() {
            s.push_str(&format!("{},{},{},{}\n", row.dataset, row.site_kind, row.flag, row.fraction));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("csv line {line}: {detail}")]
pub struct CsvError {
    pub line: usize,
    pub detail: String,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(CsvError {
                line: 1,
                detail: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let err = |detail: String| CsvError { line: k + 1, detail };
            let f: Vec<&str> = l.split(',').collect();
            let [dataset, site_kind, flag, fraction] = f[..] else {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            };
            Ok(CsvRow {
                dataset: dataset.to_string(),
                site_kind: site_kind.to_string(),
                flag: flag.to_string(),
                fraction: fraction
                    .parse()
                    .map_err(|_| err(format!("bad fraction `{fraction}`")))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown format `{s}` (expected json or csv)")),
        }
    }
}

/// Builds the feature table and classes for one workload and reports the
/// flag distributions. Reads the workload only.
pub fn cmd_analyze(w: &Workload, shape: VectorShape, model: &CostModel) -> Result<DistributionReport, CliError> {
    let plan = Plan::build(&w.seed, &w.bindings, shape, model)?;
    Ok(DistributionReport::from_plan(&w.name, w.kernel, &w.seed, &plan)?)
}

/// Relative tolerance and absolute floor for an element kind.
pub fn tolerance(kind: ElemKind) -> (f64, f64) {
    match kind {
        ElemKind::Index | ElemKind::Int64 => (0.0, 0.0),
        ElemKind::Real64 => (1e-9, 1e-12),
        ElemKind::Real32 => (1e-4, 1e-6),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOutcome {
    pub schema: u32,
    pub dataset: String,
    pub pass: bool,
    pub deviation: Deviation,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub first_violation: Option<usize>,
}

/// Runs the vector plan and the scalar interpreter on copies of the same
/// inputs and compares the outputs.
pub fn cmd_verify(w: &Workload, shape: VectorShape, model: &CostModel) -> Result<VerifyOutcome, CliError> {
    let target = w.seed.store.target.clone();
    let mut scalar = w.bindings.clone();
    scalar_execute(&w.seed, &mut scalar)?;
    let plan = Plan::build(&w.seed, &w.bindings, shape, model)?;
    let mut vector = w.bindings.clone();
    execute_plan(&plan, &mut vector)?;
    let (a, b) = (&vector[&target], &scalar[&target]);
    let (rel_tol, abs_floor) = tolerance(a.kind());
    let deviation = diff_outputs(a, b)?;
    let violation = if a.kind().is_integer() {
        deviation.first_mismatch
    } else {
        first_violation(a, b, rel_tol, abs_floor)?
    };
    Ok(VerifyOutcome {
        schema: SCHEMA_VERSION,
        dataset: w.name.clone(),
        pass: violation.is_none(),
        deviation,
        rel_tol,
        abs_floor,
        first_violation: violation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub schema: u32,
    pub dataset: String,
    pub repeat: usize,
    /// FNV-1a of the output bytes, hex.
    pub checksum: String,
    pub stats: ExecStats,
    pub cost: CostAggregate,
}

/// Inspects once, then executes `repeat` times on fresh copies of the output.
pub fn cmd_run(w: &Workload, shape: VectorShape, model: &CostModel, repeat: usize) -> Result<RunOutcome, CliError> {
    if repeat == 0 {
        return Err(CliError::Usage("--repeat must be at least 1".into()));
    }
    let plan = Plan::build(&w.seed, &w.bindings, shape, model)?;
    let report = DistributionReport::from_plan(&w.name, w.kernel, &w.seed, &plan)?;
    let target = &w.seed.store.target;
    let mut last = None;
    for _ in 0..repeat {
        let mut b = w.bindings.clone();
        let stats = execute_plan(&plan, &mut b)?;
        let sum = fnv1a64(&b[target].to_le_bytes());
        last = Some((stats, sum));
    }
    let (stats, sum) = last.expect("repeat >= 1");
    Ok(RunOutcome {
        schema: SCHEMA_VERSION,
        dataset: w.name.clone(),
        repeat,
        checksum: format!("{sum:016x}"),
        stats,
        cost: report.cost,
    })
}

/// Share of datasets above each band at a given number of loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub vloads: usize,
    pub over_25: f64,
    pub over_50: f64,
    pub over_75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub schema: u32,
    pub kernel: Kernel,
    pub width: usize,
    pub datasets: Vec<DistributionReport>,
    pub bands: Vec<BandRow>,
    /// Files that could not be loaded, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl CorpusReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Fraction of a dataset's gather sites needing at most `x` loads.
pub fn replaceable_share(r: &DistributionReport, x: usize) -> f64 {
    (1..=x)
        .map(|k| DistributionReport::fraction(&r.gather, &k.to_string()))
        .sum()
}

pub fn bands(reports: &[DistributionReport], width: usize) -> Vec<BandRow> {
    let n = reports.len();
    (1..=width)
        .map(|x| {
            let over = |t: f64| {
                if n == 0 {
                    return 0.0;
                }
                reports.iter().filter(|r| replaceable_share(r, x) > t).count() as f64 / n as f64
            };
            BandRow {
                vloads: x,
                over_25: over(0.25),
                over_50: over(0.50),
                over_75: over(0.75),
            }
        })
        .collect()
}

/// Analyzes every `.mtx` file in `dir` in parallel; failures are listed,
/// not fatal.
pub fn cmd_corpus(
    dir: &Path,
    kernel: Kernel,
    kind: ElemKind,
    shape: VectorShape,
    model: &CostModel,
) -> Result<CorpusReport, CliError> {
    let io = |source| CliError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_matrix_market(p))
        .collect();
    files.sort();
    let results: Vec<Result<DistributionReport, (String, String)>> = files
        .par_iter()
        .map(|p| {
            let src = InputSource::File(p.clone());
            load_workload(&src, kernel, kind, None)
                .and_then(|w| cmd_analyze(&w, shape, model))
                .map_err(|e| (p.display().to_string(), e.to_string()))
        })
        .collect();
    let mut datasets = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(d) => datasets.push(d),
            Err(s) => skipped.push(s),
        }
    }
    datasets.sort_by(|a, b| a.dataset.cmp(&b.dataset));
    Ok(CorpusReport {
        schema: SCHEMA_VERSION,
        kernel,
        width: shape.width(),
        bands: bands(&datasets, shape.width()),
        datasets,
        skipped,
    })
}

/// MatrixMarket text for a generator spec.
pub fn cmd_gen(src: &InputSource) -> Result<String, CliError> {
    let m = match *src {
        InputSource::Dense { rows, cols } => gen_dense(rows, cols),
        InputSource::Random {
            rows,
            cols,
            per_row,
            seed,
        } => gen_random(rows, cols, per_row, seed),
        InputSource::File(_) => {
            return Err(CliError::Usage(
                "gen expects dense:RxC or random:RxC:K:SEED".into(),
            ))
        }
    };
    Ok(write_matrix_market(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::default_policy;
    use std::io::Write;

    fn w8() -> VectorShape {
        VectorShape::new(8).unwrap()
    }

    fn analyze(src: &str, kernel: Kernel) -> DistributionReport {
        let w = load_workload(&src.parse().unwrap(), kernel, ElemKind::Real64, None).unwrap();
        cmd_analyze(&w, w8(), &default_policy(w8())).unwrap()
    }

    fn sums_to_one(bins: &[Bin]) -> bool {
        (bins.iter().map(|b| b.fraction).sum::<f64>() - 1.0).abs() < 1e-9
    }

    #[test]
    fn input_specs() {
        assert_eq!("dense:3x4".parse(), Ok(InputSource::Dense { rows: 3, cols: 4 }));
        assert_eq!(
            "random:5x6:2:9".parse(),
            Ok(InputSource::Random {
                rows: 5,
                cols: 6,
                per_row: 2,
                seed: 9
            })
        );
        assert!("dense:3".parse::<InputSource>().is_err());
        assert!("random:5x6:7:1".parse::<InputSource>().is_err());
        assert_eq!("a/b.mtx".parse::<InputSource>().unwrap().name(), "b");
    }

    #[test]
    fn single_full_row() {
        let r = analyze("dense:1x8", Kernel::Spmv);
        assert_eq!(r.groups, 1);
        assert_eq!(DistributionReport::fraction(&r.reduction, "3"), 1.0);
        assert_eq!(DistributionReport::fraction(&r.gather, "1"), 1.0);
        assert_eq!(r.reduction.len(), 4);
        assert_eq!(r.gather.len(), 9);
    }

    #[test]
    fn histograms_are_distributions() {
        let r = analyze("random:40x40:4:2", Kernel::Pagerank);
        for h in [&r.gather, &r.scatter, &r.combined, &r.reduction] {
            assert!(sums_to_one(h));
        }
        assert_eq!(r.schema, 1);
        let j: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(j["schema"], 1);
    }

    #[test]
    fn csv_matches_json() {
        let r = analyze("random:30x30:3:5", Kernel::Spmv);
        let back: DistributionReport = serde_json::from_str(&r.to_json()).unwrap();
        let rows = parse_csv(&to_csv([&r])).unwrap();
        assert_eq!(rows, back.csv_rows());
        assert!(parse_csv("nope\n").is_err());
        assert!(parse_csv(&format!("{CSV_HEADER}\na,b,c\n")).is_err());
    }

    #[test]
    fn verify_and_run() {
        let w = load_workload(&"random:30x30:5:1".parse().unwrap(), Kernel::Spmv, ElemKind::Int64, None).unwrap();
        let m = default_policy(w8());
        let v = cmd_verify(&w, w8(), &m).unwrap();
        assert!(v.pass);
        assert_eq!(v.deviation.max_abs, 0.0);
        let a = cmd_run(&w, w8(), &m, 1).unwrap();
        let b = cmd_run(&w, w8(), &m, 3).unwrap();
        assert_eq!(a.checksum, b.checksum);
        assert_eq!(a.stats, b.stats);
        assert!(matches!(cmd_run(&w, w8(), &m, 0), Err(CliError::Usage(_))));
    }

    #[test]
    fn dense_threshold_zero_gathers_more() {
        let w = load_workload(&"dense:4x64".parse().unwrap(), Kernel::Spmv, ElemKind::Real64, None).unwrap();
        let m = default_policy(w8());
        let d = cmd_run(&w, w8(), &m, 1).unwrap();
        let z = cmd_run(&w, w8(), &m.clone().with_threshold(0), 1).unwrap();
        assert_eq!(d.stats.count(crate::plan::Opcode::Gather), 0);
        assert!(z.stats.count(crate::plan::Opcode::Gather) > 0);
        assert_eq!(d.checksum, z.checksum);
    }

    #[test]
    fn corpus_bands() {
        let dir = tempfile::tempdir().unwrap();
        let empty = cmd_corpus(dir.path(), Kernel::Spmv, ElemKind::Real64, w8(), &default_policy(w8())).unwrap();
        assert!(empty.datasets.is_empty());
        assert!(empty.bands.iter().all(|b| b.over_25 == 0.0));

        for (name, spec) in [("c", "dense:4x16"), ("a", "dense:2x8"), ("b", "dense:3x24")] {
            let text = cmd_gen(&spec.parse().unwrap()).unwrap();
            fs::write(dir.path().join(format!("{name}.mtx")), text).unwrap();
        }
        let mut bad = fs::File::create(dir.path().join("broken.mtx")).unwrap();
        writeln!(bad, "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0").unwrap();
        let r = cmd_corpus(dir.path(), Kernel::Spmv, ElemKind::Real64, w8(), &default_policy(w8())).unwrap();
        let names: Vec<_> = r.datasets.iter().map(|d| d.dataset.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.bands[0].over_75, 1.0);
        assert_eq!(r.bands.len(), 8);
    }

    #[test]
    fn corrupted_file_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mtx");
        fs::write(&p, "garbage").unwrap();
        let e = load_workload(&InputSource::File(p), Kernel::Spmv, ElemKind::Real64, None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn edge_list_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.txt");
        fs::write(&p, "# edges\n0 1\n1 2\n2 0\n0 2\n").unwrap();
        let w = load_workload(&InputSource::File(p.clone()), Kernel::Pagerank, ElemKind::Real64, None).unwrap();
        assert_eq!(w.seed.trip_count, 4);
        let v = cmd_verify(&w, VectorShape::new(2).unwrap(), &default_policy(VectorShape::new(2).unwrap())).unwrap();
        assert!(v.pass);
        assert!(load_workload(&InputSource::File(p), Kernel::Pagerank, ElemKind::Real64, Some(2)).is_err());
    }
}
