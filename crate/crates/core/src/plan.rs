//! Code optimizer: lowers each pattern class to a [`VectorProgram`] and
//! accounts for what the lowering saves and costs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::data::{Bindings, BinOpKind, ReduceOp, Scalar};
use crate::feature::{
    build_feature_table, dedup_patterns, merge_same_address_runs, reduction_feature, ColumnShape,
    Dedup, FeatureColumn, FeatureError, GatherShape, LaneOffsets, PatternClass, Run, VectorShape,
};
use crate::lanes::{LaneMask, LanePerm};
use crate::seed::{CodeSeed, Combine, ExprId, SeedExpr, SiteKind};

/// Per-element rewrite that turns a sub/div reduction into add/mul.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreTransform {
    Identity,
    Negate,
    Reciprocal,
}

pub fn normalize_reduction_op(op: BinOpKind) -> (ReduceOp, PreTransform) {
    match op {
        BinOpKind::Add => (ReduceOp::Add, PreTransform::Identity),
        BinOpKind::Sub => (ReduceOp::Add, PreTransform::Negate),
        BinOpKind::Mul => (ReduceOp::Mul, PreTransform::Identity),
        BinOpKind::Div => (ReduceOp::Mul, PreTransform::Reciprocal),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Opcode {
    Vload,
    Gather,
    Broadcast,
    Permute,
    Select,
    Binop,
    ReduceStep,
    Hreduce,
    VstoreMasked,
    Scatter,
    AccInit,
    AccCombine,
}

impl Opcode {
    pub const ALL: [Opcode; 12] = [
        Opcode::Vload,
        Opcode::Gather,
        Opcode::Broadcast,
        Opcode::Permute,
        Opcode::Select,
        Opcode::Binop,
        Opcode::ReduceStep,
        Opcode::Hreduce,
        Opcode::VstoreMasked,
        Opcode::Scatter,
        Opcode::AccInit,
        Opcode::AccCombine,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Vload => "VLOAD",
            Opcode::Gather => "GATHER",
            Opcode::Broadcast => "BROADCAST",
            Opcode::Permute => "PERMUTE",
            Opcode::Select => "SELECT",
            Opcode::Binop => "BINOP",
            Opcode::ReduceStep => "REDUCE_STEP",
            Opcode::Hreduce => "HREDUCE",
            Opcode::VstoreMasked => "VSTORE_MASKED",
            Opcode::Scatter => "SCATTER",
            Opcode::AccInit => "ACC_INIT",
            Opcode::AccCombine => "ACC_COMBINE",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type OpcodeCounts = BTreeMap<Opcode, u64>;

/// SSA vector register, or the accumulator that lives across a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reg {
    V(u32),
    Acc,
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::V(n) => write!(f, "v{n}"),
            Reg::Acc => f.write_str("acc"),
        }
    }
}

/// Position of an array in the seed's declaration list.
pub type ArrayId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarSrc {
    Const(Scalar),
    /// `array[bases[slot]]`
    Elem { array: ArrayId, slot: u16 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "opcode", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VInstr {
    /// `dst[l] = array[bases[slot] + l]`
    Vload { dst: Reg, array: ArrayId, slot: u16 },
    /// `dst[l] = array[vectors[slot][l]]`
    Gather { dst: Reg, array: ArrayId, slot: u16 },
    Broadcast { dst: Reg, src: ScalarSrc },
    Permute { dst: Reg, src: Reg, perm: LanePerm },
    /// `dst[l] = mask[l] ? a[l] : b[l]`
    Select { dst: Reg, mask: LaneMask, a: Reg, b: Reg },
    Binop { dst: Reg, op: BinOpKind, a: Reg, b: Reg },
    ReduceStep { dst: Reg, src: Reg, perm: LanePerm, mask: LaneMask, op: ReduceOp },
    /// Folds every lane in order and broadcasts the result.
    Hreduce { dst: Reg, src: Reg, op: ReduceOp },
    /// `array[bases[slot] + l] = src[l]` for set lanes, ascending.
    VstoreMasked { src: Reg, array: ArrayId, slot: u16, mask: LaneMask },
    /// `array[vectors[slot][l]] = src[l]` for set lanes, ascending.
    Scatter { src: Reg, array: ArrayId, slot: u16, mask: LaneMask },
    AccInit { value: Scalar },
    /// `acc[l] = mask[l] ? op(acc[l], src[l]) : acc[l]`
    AccCombine { op: ReduceOp, src: Reg, mask: LaneMask },
}

impl VInstr {
    pub fn opcode(&self) -> Opcode {
        match self {
            VInstr::Vload { .. } => Opcode::Vload,
            VInstr::Gather { .. } => Opcode::Gather,
            VInstr::Broadcast { .. } => Opcode::Broadcast,
            VInstr::Permute { .. } => Opcode::Permute,
            VInstr::Select { .. } => Opcode::Select,
            VInstr::Binop { .. } => Opcode::Binop,
            VInstr::ReduceStep { .. } => Opcode::ReduceStep,
            VInstr::Hreduce { .. } => Opcode::Hreduce,
            VInstr::VstoreMasked { .. } => Opcode::VstoreMasked,
            VInstr::Scatter { .. } => Opcode::Scatter,
            VInstr::AccInit { .. } => Opcode::AccInit,
            VInstr::AccCombine { .. } => Opcode::AccCombine,
        }
    }
}

/// Where a scalar operand slot gets its value from a feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSource {
    SiteWindow { site: usize, window: usize },
    WriteWindow { window: usize },
    /// The address lane 0 writes; the representative address of a
    /// single-address group.
    WriteLane0,
}

/// Where a lane-vector operand slot gets its value from a feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    SiteIndices { site: usize },
    WriteAddrs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub bases: Vec<BaseSource>,
    pub vectors: Vec<VectorSource>,
}

/// Per-group operand record supplied to a program.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Operands {
    pub bases: SmallVec<[i64; 4]>,
    pub vectors: SmallVec<[LaneOffsets; 2]>,
}

impl SlotSchema {
    pub fn operands(&self, col: &FeatureColumn) -> Operands {
        let bases = self
            .bases
            .iter()
            .map(|b| match *b {
                BaseSource::SiteWindow { site, window } => col.sites[site].gather.bases[window],
                BaseSource::WriteWindow { window } => col.write.window.bases[window],
                BaseSource::WriteLane0 => col.write.addrs[0],
            })
            .collect();
        let vectors = self
            .vectors
            .iter()
            .map(|v| match *v {
                VectorSource::SiteIndices { site } => col.sites[site].indices.clone(),
                VectorSource::WriteAddrs => col.write.addrs.clone(),
            })
            .collect();
        Operands { bases, vectors }
    }
}

/// Vector code for one pattern class (or for closing a same-address run).
///
/// Every group runs `body`. Groups outside a multi-group run then run
/// `store`; groups inside one run `acc_init` (head only) and `acc_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorProgram {
    /// `None` for the run-flush program.
    pub class: Option<usize>,
    pub width: usize,
    pub arrays: Vec<String>,
    pub schema: SlotSchema,
    pub registers: u32,
    pub body: Vec<VInstr>,
    pub store: Vec<VInstr>,
    pub acc_init: Vec<VInstr>,
    pub acc_step: Vec<VInstr>,
}

impl VectorProgram {
    pub fn instructions(&self) -> impl Iterator<Item = &VInstr> {
        self.body
            .iter()
            .chain(&self.store)
            .chain(&self.acc_init)
            .chain(&self.acc_step)
    }

    /// Static opcode counts over all sections.
    pub fn counts(&self) -> OpcodeCounts {
        let mut out = OpcodeCounts::new();
        for i in self.instructions() {
            *out.entry(i.opcode()).or_default() += 1;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }
}

/// Unit cost per opcode plus the gather replacement threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub costs: BTreeMap<Opcode, u32>,
    /// Largest window count for which a gather is replaced by loads.
    pub gather_threshold: usize,
    pub index_bits: u32,
}

/// Partial override of a [`CostModel`], as read from a config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default)]
    pub costs: BTreeMap<Opcode, u32>,
    pub gather_threshold: Option<usize>,
    pub index_bits: Option<u32>,
}

pub fn default_policy(shape: VectorShape) -> CostModel {
    let w = shape.width() as u32;
    let costs = Opcode::ALL
        .iter()
        .map(|&op| {
            let c = match op {
                Opcode::Gather | Opcode::Scatter => w,
                Opcode::ReduceStep => 2,
                Opcode::Hreduce => 3,
                _ => 1,
            };
            (op, c)
        })
        .collect();
    CostModel {
        costs,
        gather_threshold: 2,
        index_bits: 64,
    }
}

impl CostModel {
    pub fn cost(&self, op: Opcode) -> u64 {
        self.costs.get(&op).copied().unwrap_or(1) as u64
    }

    pub fn with_threshold(mut self, threshold: usize) -> Self {
        self.gather_threshold = threshold;
        self
    }

    pub fn apply(&mut self, config: CostConfig) {
        self.costs.extend(config.costs);
        if let Some(t) = config.gather_threshold {
            self.gather_threshold = t;
        }
        if let Some(b) = config.index_bits {
            self.index_bits = b;
        }
    }

    pub fn apply_json(&mut self, json: &str) -> Result<(), serde_json::Error> {
        self.apply(serde_json::from_str(json)?);
        Ok(())
    }

    /// Weighted cost of a set of opcode counts.
    pub fn weigh(&self, counts: &OpcodeCounts) -> u64 {
        counts.iter().map(|(&op, &n)| self.cost(op) * n).sum()
    }

    /// Whether a load site is lowered to contiguous loads instead of a gather.
    pub fn replaces(&self, kind: SiteKind, g: &GatherShape) -> bool {
        g.is_replaceable() && (kind == SiteKind::Direct || g.flag <= self.gather_threshold)
    }

    /// Whether a conflict-free store goes through one window load/store.
    pub fn window_store(&self, shape: &ColumnShape) -> bool {
        shape.write_window.flag == 1
            && self.gather_threshold >= 1
            && shape.distinct_writes == shape.tail_mask.count()
    }

    /// HREDUCE instead of `steps` REDUCE_STEPs.
    pub fn prefers_hreduce(&self, steps: usize) -> bool {
        self.cost(Opcode::Hreduce) < steps as u64 * self.cost(Opcode::ReduceStep)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("class shape has {shape} load sites, seed has {seed}")]
    SiteCount { shape: usize, seed: usize },
    #[error("store target `{0}` is not declared")]
    UnknownTarget(String),
}

struct Lowerer<'a> {
    seed: &'a CodeSeed,
    model: &'a CostModel,
    width: usize,
    next: u32,
    schema: SlotSchema,
    target: ArrayId,
}

impl<'a> Lowerer<'a> {
    fn new(seed: &'a CodeSeed, model: &'a CostModel, width: usize) -> Result<Self, PlanError> {
        let target = array_id(seed, &seed.store.target)
            .ok_or_else(|| PlanError::UnknownTarget(seed.store.target.clone()))?;
        Ok(Lowerer {
            seed,
            model,
            width,
            next: 0,
            schema: SlotSchema::default(),
            target,
        })
    }

    fn reg(&mut self) -> Reg {
        self.next += 1;
        Reg::V(self.next - 1)
    }

    fn base(&mut self, src: BaseSource) -> u16 {
        slot(&mut self.schema.bases, src)
    }

    fn vector(&mut self, src: VectorSource) -> u16 {
        slot(&mut self.schema.vectors, src)
    }

    fn load(&mut self, out: &mut Vec<VInstr>, site: usize, kind: SiteKind, array: ArrayId, g: &GatherShape) -> Reg {
        if !self.model.replaces(kind, g) {
            let slot = self.vector(VectorSource::SiteIndices { site });
            let dst = self.reg();
            out.push(VInstr::Gather { dst, array, slot });
            return dst;
        }
        let mut loaded = SmallVec::<[Reg; 4]>::new();
        for window in 0..g.flag {
            let slot = self.base(BaseSource::SiteWindow { site, window });
            let dst = self.reg();
            out.push(VInstr::Vload { dst, array, slot });
            loaded.push(dst);
        }
        if g.flag > 1 || !g.perm.is_identity() {
            for r in loaded.iter_mut() {
                let dst = self.reg();
                out.push(VInstr::Permute {
                    dst,
                    src: *r,
                    perm: g.perm,
                });
                *r = dst;
            }
        }
        let mut acc = loaded[0];
        for k in 1..g.flag {
            let dst = self.reg();
            out.push(VInstr::Select {
                dst,
                mask: g.masks[k - 1],
                a: loaded[k],
                b: acc,
            });
            acc = dst;
        }
        acc
    }

    fn body(&mut self, shape: &ColumnShape, out: &mut Vec<VInstr>) -> Result<Reg, PlanError> {
        let sites = self.seed.value_sites();
        if sites.len() != shape.sites.len() {
            return Err(PlanError::SiteCount {
                shape: shape.sites.len(),
                seed: sites.len(),
            });
        }
        let mut regs: HashMap<ExprId, Reg> = HashMap::new();
        let mut site = 0;
        for id in self.seed.value_postorder() {
            let r = match self.seed.node(id).expect("validated seed") {
                SeedExpr::LoadDirect { array } | SeedExpr::LoadIndirect { array, .. } => {
                    let a = array_id(self.seed, array).expect("validated seed");
                    let r = self.load(out, site, sites[site].kind, a, &shape.sites[site]);
                    site += 1;
                    r
                }
                SeedExpr::Const { value, .. } => {
                    let dst = self.reg();
                    out.push(VInstr::Broadcast {
                        dst,
                        src: ScalarSrc::Const(*value),
                    });
                    dst
                }
                SeedExpr::BinOp { op, lhs, rhs } => {
                    let dst = self.reg();
                    out.push(VInstr::Binop {
                        dst,
                        op: *op,
                        a: regs[lhs],
                        b: regs[rhs],
                    });
                    dst
                }
            };
            regs.insert(id, r);
        }
        Ok(regs[&self.seed.store.value])
    }

    /// `old op r` written to the representative address from lane 0.
    fn store_lane0(&mut self, out: &mut Vec<VInstr>, op: ReduceOp, r: Reg) {
        let slot = self.base(BaseSource::WriteLane0);
        let old = self.reg();
        out.push(VInstr::Broadcast {
            dst: old,
            src: ScalarSrc::Elem {
                array: self.target,
                slot,
            },
        });
        let new = self.reg();
        out.push(VInstr::Binop {
            dst: new,
            op: op.as_binop(),
            a: old,
            b: r,
        });
        out.push(VInstr::VstoreMasked {
            src: new,
            array: self.target,
            slot,
            mask: LaneMask::single(self.width, 0),
        });
    }

    fn reduce_steps(&mut self, out: &mut Vec<VInstr>, steps: &[crate::feature::ReductionStep], op: ReduceOp, mut src: Reg) -> Reg {
        for s in steps {
            let dst = self.reg();
            out.push(VInstr::ReduceStep {
                dst,
                src,
                perm: s.perm,
                mask: s.mask,
                op,
            });
            src = dst;
        }
        src
    }

    /// Rearranges `val` into window positions and stores it in one masked store.
    fn window_write(&mut self, out: &mut Vec<VInstr>, shape: &ColumnShape, val: Reg) {
        let (inv, positions) = window_inverse(shape);
        let slot = self.base(BaseSource::WriteWindow { window: 0 });
        let mut src = val;
        if !inv.is_identity() {
            let dst = self.reg();
            out.push(VInstr::Permute { dst, src, perm: inv });
            src = dst;
        }
        out.push(VInstr::VstoreMasked {
            src,
            array: self.target,
            slot,
            mask: positions,
        });
    }

    fn store(&mut self, shape: &ColumnShape, val: Reg, out: &mut Vec<VInstr>) {
        let target = self.target;
        match self.seed.store.combine {
            Combine::Overwrite => {
                if self.model.window_store(shape) {
                    self.window_write(out, shape, val);
                } else {
                    let slot = self.vector(VectorSource::WriteAddrs);
                    out.push(VInstr::Scatter {
                        src: val,
                        array: target,
                        slot,
                        mask: shape.tail_mask,
                    });
                }
            }
            Combine::Reduce(op) => {
                let red = shape.reduction.as_ref().expect("reduce store has a reduction feature");
                if shape.distinct_writes == 1 {
                    let r = if red.use_hreduce && self.model.prefers_hreduce(red.flag) {
                        let dst = self.reg();
                        out.push(VInstr::Hreduce { dst, src: val, op });
                        dst
                    } else {
                        self.reduce_steps(out, &red.steps, op, val)
                    };
                    self.store_lane0(out, op, r);
                } else if red.flag == 0 && self.model.window_store(shape) {
                    let slot = self.base(BaseSource::WriteWindow { window: 0 });
                    let mut old = self.reg();
                    out.push(VInstr::Vload {
                        dst: old,
                        array: target,
                        slot,
                    });
                    if !shape.write_window.perm.is_identity() {
                        let dst = self.reg();
                        out.push(VInstr::Permute {
                            dst,
                            src: old,
                            perm: shape.write_window.perm,
                        });
                        old = dst;
                    }
                    let new = self.reg();
                    out.push(VInstr::Binop {
                        dst: new,
                        op: op.as_binop(),
                        a: old,
                        b: val,
                    });
                    self.window_write(out, shape, new);
                } else {
                    let r = self.reduce_steps(out, &red.steps, op, val);
                    let slot = self.vector(VectorSource::WriteAddrs);
                    let old = self.reg();
                    out.push(VInstr::Gather {
                        dst: old,
                        array: target,
                        slot,
                    });
                    let new = self.reg();
                    out.push(VInstr::Binop {
                        dst: new,
                        op: op.as_binop(),
                        a: old,
                        b: r,
                    });
                    let mask = if red.flag == 0 { shape.tail_mask } else { red.reps };
                    out.push(VInstr::Scatter {
                        src: new,
                        array: target,
                        slot,
                        mask,
                    });
                }
            }
        }
    }

    fn finish(self, class: Option<usize>, body: Vec<VInstr>, store: Vec<VInstr>, acc_init: Vec<VInstr>, acc_step: Vec<VInstr>) -> VectorProgram {
        VectorProgram {
            class,
            width: self.width,
            arrays: self.seed.decls.iter().map(|d| d.name.clone()).collect(),
            schema: self.schema,
            registers: self.next,
            body,
            store,
            acc_init,
            acc_step,
        }
    }
}

fn slot<T: PartialEq>(v: &mut Vec<T>, src: T) -> u16 {
    match v.iter().position(|s| *s == src) {
        Some(p) => p as u16,
        None => {
            v.push(src);
            v.len() as u16 - 1
        }
    }
}

pub fn array_id(seed: &CodeSeed, name: &str) -> Option<ArrayId> {
    seed.decls.iter().position(|d| d.name == name).map(|p| p as ArrayId)
}

/// Inverse of the write-window perm over active lanes: window position
/// `p` takes the lane whose address is `base + p`.
fn window_inverse(shape: &ColumnShape) -> (LanePerm, LaneMask) {
    let w = shape.width;
    let mut inv = LanePerm::identity(w);
    let mut positions = LaneMask::none(w);
    for l in shape.tail_mask.lanes() {
        let p = shape.write_window.perm.get(l);
        inv.set(p, l);
        positions.set(p, true);
    }
    (inv, positions)
}

/// Lowers one pattern class.
pub fn lower_class(class: &PatternClass, seed: &CodeSeed, model: &CostModel) -> Result<VectorProgram, PlanError> {
    let shape = &class.shape;
    let mut lw = Lowerer::new(seed, model, shape.width)?;
    let mut body = Vec::new();
    let val = lw.body(shape, &mut body)?;
    let mut store = Vec::new();
    lw.store(shape, val, &mut store);
    let (mut acc_init, mut acc_step) = (Vec::new(), Vec::new());
    if let Combine::Reduce(op) = seed.store.combine {
        if shape.distinct_writes == 1 {
            let kind = seed.value_kind().expect("validated seed");
            acc_init.push(VInstr::AccInit {
                value: kind.identity(op),
            });
            acc_step.push(VInstr::AccCombine {
                op,
                src: val,
                mask: shape.tail_mask,
            });
        }
    }
    Ok(lw.finish(Some(class.id), body, store, acc_init, acc_step))
}

/// Program run once at the end of each same-address run: reduces the
/// accumulator across all lanes and folds it into the target.
pub fn lower_run_flush(seed: &CodeSeed, shape: VectorShape, model: &CostModel) -> Result<Option<VectorProgram>, PlanError> {
    let Combine::Reduce(op) = seed.store.combine else {
        return Ok(None);
    };
    let w = shape.width();
    let mut lw = Lowerer::new(seed, model, w)?;
    let mut out = Vec::new();
    let r = if model.prefers_hreduce(shape.log2()) {
        let dst = lw.reg();
        out.push(VInstr::Hreduce {
            dst,
            src: Reg::Acc,
            op,
        });
        dst
    } else {
        let full = reduction_feature(&vec![0; w], LaneMask::all(w), shape);
        lw.reduce_steps(&mut out, &full.steps, op, Reg::Acc)
    };
    lw.store_lane0(&mut out, op, r);
    Ok(Some(lw.finish(None, Vec::new(), out, Vec::new(), Vec::new())))
}

fn bump(c: &mut OpcodeCounts, op: Opcode, n: u64) {
    if n > 0 {
        *c.entry(op).or_default() += n;
    }
}

/// Opcode counts a class program must contain, from the class shape and
/// the policy alone.
pub fn predict_counts(shape: &ColumnShape, seed: &CodeSeed, model: &CostModel) -> Result<OpcodeCounts, PlanError> {
    let sites = seed.value_sites();
    if sites.len() != shape.sites.len() {
        return Err(PlanError::SiteCount {
            shape: shape.sites.len(),
            seed: sites.len(),
        });
    }
    let mut c = OpcodeCounts::new();
    for (site, g) in sites.iter().zip(&shape.sites) {
        if model.replaces(site.kind, g) {
            let m = g.flag as u64;
            bump(&mut c, Opcode::Vload, m);
            let skip = m == 1 && g.perm.is_identity();
            bump(&mut c, Opcode::Permute, if skip { 0 } else { m });
            bump(&mut c, Opcode::Select, m - 1);
        } else {
            bump(&mut c, Opcode::Gather, 1);
        }
    }
    for id in seed.value_postorder() {
        match seed.node(id) {
            Some(SeedExpr::Const { .. }) => bump(&mut c, Opcode::Broadcast, 1),
            Some(SeedExpr::BinOp { .. }) => bump(&mut c, Opcode::Binop, 1),
            _ => {}
        }
    }
    let window_store = |c: &mut OpcodeCounts| {
        let (inv, _) = window_inverse(shape);
        bump(c, Opcode::Permute, !inv.is_identity() as u64);
        bump(c, Opcode::VstoreMasked, 1);
    };
    match seed.store.combine {
        Combine::Overwrite if model.window_store(shape) => window_store(&mut c),
        Combine::Overwrite => bump(&mut c, Opcode::Scatter, 1),
        Combine::Reduce(_) => {
            let red = shape.reduction.as_ref().expect("reduce store has a reduction feature");
            let m_r = red.flag as u64;
            if shape.distinct_writes == 1 {
                if red.use_hreduce && model.prefers_hreduce(red.flag) {
                    bump(&mut c, Opcode::Hreduce, 1);
                } else {
                    bump(&mut c, Opcode::ReduceStep, m_r);
                }
                bump(&mut c, Opcode::Broadcast, 1);
                bump(&mut c, Opcode::Binop, 1);
                bump(&mut c, Opcode::VstoreMasked, 1);
                bump(&mut c, Opcode::AccInit, 1);
                bump(&mut c, Opcode::AccCombine, 1);
            } else if m_r == 0 && model.window_store(shape) {
                bump(&mut c, Opcode::Vload, 1);
                bump(&mut c, Opcode::Permute, !shape.write_window.perm.is_identity() as u64);
                bump(&mut c, Opcode::Binop, 1);
                window_store(&mut c);
            } else {
                bump(&mut c, Opcode::ReduceStep, m_r);
                bump(&mut c, Opcode::Gather, 1);
                bump(&mut c, Opcode::Binop, 1);
                bump(&mut c, Opcode::Scatter, 1);
            }
        }
    }
    Ok(c)
}

/// Opcode counts of the run-flush program.
pub fn predict_flush_counts(shape: VectorShape, model: &CostModel) -> OpcodeCounts {
    let mut c = OpcodeCounts::new();
    if model.prefers_hreduce(shape.log2()) {
        bump(&mut c, Opcode::Hreduce, 1);
    } else {
        bump(&mut c, Opcode::ReduceStep, shape.log2() as u64);
    }
    bump(&mut c, Opcode::Broadcast, 1);
    bump(&mut c, Opcode::Binop, 1);
    bump(&mut c, Opcode::VstoreMasked, 1);
    c
}

/// Calculation, reduction and permutation counts of one reduction site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub calculations: u64,
    pub reductions: u64,
    pub permutations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionSiteCost {
    /// Shuffle-combine steps.
    pub flag: usize,
    /// Distinct write addresses.
    pub distinct: usize,
    pub original: OpCounts,
    pub optimized: OpCounts,
    pub original_index_bits: u64,
    pub optimized_index_bits: u64,
    pub original_data_bits: u64,
    pub optimized_data_bits: u64,
    pub additional_bits: u64,
    pub original_store_bits: u64,
    pub optimized_store_bits: u64,
    /// `flag * PERMUTE < (W - 1) * BINOP + (W - flag) * BINOP`
    pub profitable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatherSiteCost {
    pub site: usize,
    pub flag: usize,
    /// What the lowering actually emitted.
    pub replaced: bool,
    pub original_index_bits: u64,
    pub optimized_index_bits: u64,
    pub original_data_bits: u64,
    pub optimized_data_bits: u64,
    pub additional_bits: u64,
    /// Replacement saves more index bits than it adds and its
    /// instruction group is cheaper than one GATHER.
    pub profitable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub class: usize,
    pub gathers: Vec<GatherSiteCost>,
    pub reduction: Option<ReductionSiteCost>,
    /// Static opcode counts the lowered program must have.
    pub predicted: OpcodeCounts,
    pub weighted_cost: u64,
}

pub fn cost_of(class: &PatternClass, seed: &CodeSeed, model: &CostModel) -> Result<CostReport, PlanError> {
    let shape = &class.shape;
    let w = shape.width as u64;
    let log2w = w.trailing_zeros() as u64;
    let ib = model.index_bits as u64;
    let kind = seed.value_kind().expect("validated seed");
    let db = kind.size_bytes() as u64 * 8;
    let predicted = predict_counts(shape, seed, model)?;

    let mut gathers = Vec::new();
    for (site, (s, g)) in seed.value_sites().iter().zip(&shape.sites).enumerate() {
        if s.kind != SiteKind::Indirect {
            continue;
        }
        let data_kind = seed.decl(&s.array).map_or(kind, |d| d.elem);
        let sdb = data_kind.size_bytes() as u64 * 8;
        let original = (w * ib, w * sdb);
        let (opt_index, opt_data, additional) = if g.is_replaceable() {
            let m = g.flag as u64;
            (m * ib, m * w * sdb, w * log2w + (m - 1) * w)
        } else {
            (original.0, original.1, 0)
        };
        let group_cost = if g.is_replaceable() {
            let m = g.flag as u64;
            m * model.cost(Opcode::Vload) + m * model.cost(Opcode::Permute) + (m - 1) * model.cost(Opcode::Select)
        } else {
            u64::MAX
        };
        gathers.push(GatherSiteCost {
            site,
            flag: g.flag,
            replaced: model.replaces(s.kind, g),
            original_index_bits: original.0,
            optimized_index_bits: opt_index,
            original_data_bits: original.1,
            optimized_data_bits: opt_data,
            additional_bits: additional,
            profitable: g.is_replaceable()
                && original.0 - opt_index > additional
                && group_cost < model.cost(Opcode::Gather),
        });
    }

    let reduction = shape.reduction.as_ref().map(|r| {
        let m = r.flag as u64;
        let k = shape.distinct_writes as u64;
        let calc = model.cost(Opcode::Binop);
        ReductionSiteCost {
            flag: r.flag,
            distinct: shape.distinct_writes,
            original: OpCounts {
                calculations: w,
                reductions: w,
                permutations: 0,
            },
            optimized: OpCounts {
                calculations: 1,
                reductions: m,
                permutations: m,
            },
            original_index_bits: w * ib,
            optimized_index_bits: k * ib,
            original_data_bits: w * db,
            optimized_data_bits: k * db,
            additional_bits: m * w * log2w,
            original_store_bits: w * db,
            optimized_store_bits: k * db,
            profitable: m * model.cost(Opcode::Permute) < (w - 1) * calc + (w - m) * calc,
        }
    });

    Ok(CostReport {
        class: class.id,
        gathers,
        reduction,
        weighted_cost: model.weigh(&predicted),
        predicted,
    })
}

/// Everything the inspector produces: feature table, classes, runs and one
/// program per class. Built once, executed any number of times.
#[derive(Debug, Clone)]
pub struct Plan {
    pub shape: VectorShape,
    pub model: CostModel,
    pub arrays: Vec<String>,
    pub target: ArrayId,
    pub table: Vec<FeatureColumn>,
    pub dedup: Dedup,
    pub runs: Vec<Run>,
    pub programs: Vec<VectorProgram>,
    pub flush: Option<VectorProgram>,
}

impl Plan {
    pub fn build(seed: &CodeSeed, bindings: &Bindings, shape: VectorShape, model: &CostModel) -> Result<Plan, PlanError> {
        let mut table = build_feature_table(seed, bindings, shape)?;
        let runs = merge_same_address_runs(&mut table);
        let dedup = dedup_patterns(&table);
        let programs = dedup
            .classes
            .iter()
            .map(|c| lower_class(c, seed, model))
            .collect::<Result<Vec<_>, _>>()?;
        let flush = if runs.iter().any(|r| r.len > 1) {
            lower_run_flush(seed, shape, model)?
        } else {
            None
        };
        Ok(Plan {
            shape,
            model: model.clone(),
            arrays: seed.decls.iter().map(|d| d.name.clone()).collect(),
            target: array_id(seed, &seed.store.target).expect("validated seed"),
            table,
            dedup,
            runs,
            programs,
            flush,
        })
    }

    pub fn cost_reports(&self, seed: &CodeSeed) -> Result<Vec<CostReport>, PlanError> {
        self.dedup
            .classes
            .iter()
            .map(|c| cost_of(c, seed, &self.model))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Buffer, ElemKind};
    use crate::feature::{build_feature_table, dedup_patterns, merge_same_address_runs};
    use crate::ingest::gen_dense;
    use crate::seed::{build_pagerank_seed, build_spmv_seed, scalar_execute, SeedBuilder};

    fn w(n: usize) -> VectorShape {
        VectorShape::new(n).unwrap()
    }

    fn classes(seed: &CodeSeed, b: &Bindings, width: usize) -> Vec<PatternClass> {
        let mut t = build_feature_table(seed, b, w(width)).unwrap();
        merge_same_address_runs(&mut t);
        dedup_patterns(&t).classes
    }

    fn ops(p: &[VInstr]) -> Vec<Opcode> {
        p.iter().map(|i| i.opcode()).collect()
    }

    #[test]
    fn normalize() {
        assert_eq!(normalize_reduction_op(BinOpKind::Add), (ReduceOp::Add, PreTransform::Identity));
        assert_eq!(normalize_reduction_op(BinOpKind::Sub), (ReduceOp::Add, PreTransform::Negate));
        assert_eq!(normalize_reduction_op(BinOpKind::Mul), (ReduceOp::Mul, PreTransform::Identity));
        assert_eq!(normalize_reduction_op(BinOpKind::Div), (ReduceOp::Mul, PreTransform::Reciprocal));
    }

    #[test]
    fn div_reduction_rewrites_to_reciprocal_product() {
        let mut b = SeedBuilder::new(2);
        b.input("v", ElemKind::Real64).output("y", ElemKind::Real64).access("at");
        let v = b.load("v");
        let at = b.load("at");
        let seed = b.finish_reduction("y", at, v, BinOpKind::Div).unwrap();
        let mut bind = Bindings::new();
        bind.insert("v".into(), Buffer::Real64(vec![2.0, 2.0]));
        bind.insert("at".into(), Buffer::Index(vec![0, 0]));
        bind.insert("y".into(), Buffer::Real64(vec![8.0]));
        scalar_execute(&seed, &mut bind).unwrap();
        assert_eq!(bind["y"], Buffer::Real64(vec![2.0]));

        let mut b = SeedBuilder::new(1);
        b.input("v", ElemKind::Int64).output("y", ElemKind::Int64).access("at");
        let v = b.load("v");
        let at = b.load("at");
        assert!(b.finish_reduction("y", at, v, BinOpKind::Div).is_err());
    }

    fn dense_spmv(rows: usize, cols: usize) -> (CodeSeed, Bindings) {
        let m = gen_dense(rows, cols);
        (build_spmv_seed(m.nnz()), m.spmv_bindings(ElemKind::Real64, &vec![1.0; cols]))
    }

    #[test]
    fn dense_class_program() {
        let (seed, b) = dense_spmv(3, 2000);
        let model = default_policy(w(8));
        let cs = classes(&seed, &b, 8);
        assert_eq!(cs.len(), 1);
        let p = lower_class(&cs[0], &seed, &model).unwrap();
        assert_eq!(ops(&p.body), vec![Opcode::Vload, Opcode::Vload, Opcode::Binop]);
        assert_eq!(ops(&p.acc_step), vec![Opcode::AccCombine]);
        assert_eq!(ops(&p.acc_init), vec![Opcode::AccInit]);
        assert_eq!(
            ops(&p.store),
            vec![Opcode::Hreduce, Opcode::Broadcast, Opcode::Binop, Opcode::VstoreMasked]
        );
        let f = lower_run_flush(&seed, w(8), &model).unwrap().unwrap();
        assert_eq!(ops(&f.store), vec![Opcode::Hreduce, Opcode::Broadcast, Opcode::Binop, Opcode::VstoreMasked]);
        assert_eq!(f.counts(), predict_flush_counts(w(8), &model));
    }

    #[test]
    fn flag_two_uses_loads_permutes_select() {
        let mut b = SeedBuilder::new(4);
        b.access("idx").access("pos").input("data", ElemKind::Int64).output("out", ElemKind::Int64);
        let i = b.load("idx");
        let d = b.load_at("data", i);
        let p = b.load("pos");
        let seed = b.finish("out", p, d, Combine::Overwrite);
        let mut bind = Bindings::new();
        bind.insert("idx".into(), Buffer::Index(vec![0, 4, 5, 1]));
        bind.insert("pos".into(), Buffer::Index(vec![0, 1, 2, 3]));
        bind.insert("data".into(), Buffer::Int64((10..18).collect()));
        bind.insert("out".into(), Buffer::zeros(ElemKind::Int64, 4));
        let cs = classes(&seed, &bind, 4);
        let p = lower_class(&cs[0], &seed, &default_policy(w(4))).unwrap();
        assert_eq!(
            ops(&p.body),
            vec![Opcode::Vload, Opcode::Vload, Opcode::Permute, Opcode::Permute, Opcode::Select]
        );
        assert_eq!(ops(&p.store), vec![Opcode::VstoreMasked]);
        assert!(p.acc_step.is_empty());
    }

    #[test]
    fn threshold_boundaries() {
        let mut b = SeedBuilder::new(4);
        b.access("idx").access("pos").input("data", ElemKind::Int64).output("out", ElemKind::Int64);
        let i = b.load("idx");
        let d = b.load_at("data", i);
        let p = b.load("pos");
        let seed = b.finish("out", p, d, Combine::Overwrite);
        let mut bind = Bindings::new();
        bind.insert("idx".into(), Buffer::Index(vec![0, 5, 10, 15]));
        bind.insert("pos".into(), Buffer::Index(vec![3, 2, 1, 0]));
        bind.insert("data".into(), Buffer::Int64((0..16).collect()));
        bind.insert("out".into(), Buffer::zeros(ElemKind::Int64, 4));
        let cs = classes(&seed, &bind, 4);
        let model = default_policy(w(4));
        let p = lower_class(&cs[0], &seed, &model).unwrap();
        assert_eq!(ops(&p.body), vec![Opcode::Gather]);
        let p = lower_class(&cs[0], &seed, &model.clone().with_threshold(4)).unwrap();
        assert_eq!(p.counts()[&Opcode::Vload], 4);
        let p = lower_class(&cs[0], &seed, &model.with_threshold(0)).unwrap();
        assert_eq!(ops(&p.body), vec![Opcode::Gather]);
        assert_eq!(ops(&p.store), vec![Opcode::Scatter]);
    }

    #[test]
    fn flag_zero_has_no_reduction_ops() {
        let m = crate::ingest::gen_random(40, 40, 3, 7);
        let seed = build_pagerank_seed(m.nnz());
        let b = m.to_edge_list().pagerank_bindings(ElemKind::Real64);
        let model = default_policy(w(4));
        for c in classes(&seed, &b, 4) {
            let p = lower_class(&c, &seed, &model).unwrap();
            if c.shape.reduction.as_ref().unwrap().flag == 0 {
                assert!(p.instructions().all(|i| !matches!(i.opcode(), Opcode::ReduceStep | Opcode::Hreduce)));
            }
            assert_eq!(p.counts(), predict_counts(&c.shape, &seed, &model).unwrap());
        }
    }

    #[test]
    fn cost_report_formulas() {
        let (seed, b) = dense_spmv(1, 8);
        let cs = classes(&seed, &b, 8);
        let r = cost_of(&cs[0], &seed, &default_policy(w(8))).unwrap();
        let red = r.reduction.unwrap();
        assert_eq!(red.original, OpCounts { calculations: 8, reductions: 8, permutations: 0 });
        assert_eq!(red.optimized, OpCounts { calculations: 1, reductions: 3, permutations: 3 });
        assert_eq!(r.gathers.len(), 1);
        assert_eq!(r.gathers[0].flag, 1);
        assert!(r.gathers[0].profitable);
    }

    #[test]
    fn gather_cost_flag_two_and_w() {
        let mut b = SeedBuilder::new(8);
        b.access("idx").access("pos").input("data", ElemKind::Int64).output("out", ElemKind::Int64);
        let i = b.load("idx");
        let d = b.load_at("data", i);
        let p = b.load("pos");
        let seed = b.finish("out", p, d, Combine::Overwrite);
        let mut bind = Bindings::new();
        bind.insert("idx".into(), Buffer::Index(vec![0, 1, 2, 3, 20, 21, 22, 23]));
        bind.insert("pos".into(), Buffer::Index((0..8).collect()));
        bind.insert("data".into(), Buffer::Int64((0..80).collect()));
        bind.insert("out".into(), Buffer::zeros(ElemKind::Int64, 8));
        let model = default_policy(w(8));
        let cs = classes(&seed, &bind, 8);
        let g = &cost_of(&cs[0], &seed, &model).unwrap().gathers[0];
        assert_eq!(g.flag, 2);
        assert_eq!(g.original_index_bits - g.optimized_index_bits, 6 * 64);
        assert_eq!(g.additional_bits, 32);

        bind.insert("idx".into(), Buffer::Index((0..8).map(|k| k * 9).collect()));
        let cs = classes(&seed, &bind, 8);
        let g = &cost_of(&cs[0], &seed, &model).unwrap().gathers[0];
        assert_eq!(g.flag, 8);
        assert_eq!(g.original_index_bits, g.optimized_index_bits);
        assert!(!g.profitable && !g.replaced);
    }

    #[test]
    fn cost_config_overrides() {
        let mut m = default_policy(w(8));
        m.apply_json(r#"{"costs": {"GATHER": 2, "HREDUCE": 9}, "gather_threshold": 5}"#).unwrap();
        assert_eq!(m.cost(Opcode::Gather), 2);
        assert_eq!(m.gather_threshold, 5);
        assert!(!m.prefers_hreduce(3));
        assert!(m.apply_json(r#"{"bogus": 1}"#).is_err());
        assert!(m.apply_json(r#"{"costs": {"GATHER": -1}}"#).is_err());
    }

    #[test]
    fn program_json_names_opcodes() {
        let (seed, b) = dense_spmv(1, 8);
        let cs = classes(&seed, &b, 8);
        let p = lower_class(&cs[0], &seed, &default_policy(w(8))).unwrap();
        let j = p.to_json();
        assert!(j.contains("\"VLOAD\"") && j.contains("\"HREDUCE\"") && j.contains("\"ACC_COMBINE\""), "{j}");
        let back: VectorProgram = serde_json::from_str(&j).unwrap();
        assert_eq!(back, p);
    }
}
