//! Lane-explicit vector machine. Executes [`VectorProgram`]s group by group
//! and counts dynamic instructions, bytes and touched cache lines.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::data::{ArithError, Bindings, BinOpKind, Buffer, ReduceOp, Scalar};
use crate::feature::VectorShape;
use crate::lanes::{LaneMask, LanePerm, MAX_LANES};
use crate::plan::{ArrayId, CostModel, Opcode, OpcodeCounts, Operands, Plan, PlanError, Reg, ScalarSrc, VInstr, VectorProgram};
use crate::seed::{CodeSeed, ExecError};

pub const LINE_BYTES: u64 = 64;

/// One vector register: `width` scalars of a single element kind.
#[derive(Clone, Copy, PartialEq)]
pub struct LaneVector {
    width: u8,
    lanes: [Scalar; MAX_LANES],
}

impl std::fmt::Debug for LaneVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl LaneVector {
    pub fn splat(width: usize, value: Scalar) -> Self {
        assert!(width <= MAX_LANES);
        LaneVector {
            width: width as u8,
            lanes: [value; MAX_LANES],
        }
    }

    pub fn from_scalars(values: &[Scalar]) -> Self {
        let mut v = Self::splat(values.len(), Scalar::Int(0));
        v.lanes[..values.len()].copy_from_slice(values);
        v
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn get(&self, lane: usize) -> Scalar {
        self.as_slice()[lane]
    }

    pub fn as_slice(&self) -> &[Scalar] {
        &self.lanes[..self.width()]
    }

    pub fn to_vec(&self) -> Vec<Scalar> {
        self.as_slice().to_vec()
    }

    /// `out[l] = self[perm[l]]`
    pub fn permute(&self, perm: LanePerm) -> Self {
        let mut out = *self;
        for l in 0..self.width() {
            out.lanes[l] = self.lanes[perm.get(l)];
        }
        out
    }

    /// `out[l] = mask[l] ? a[l] : b[l]`
    pub fn select(mask: LaneMask, a: &Self, b: &Self) -> Self {
        let mut out = *b;
        for l in mask.lanes() {
            out.lanes[l] = a.lanes[l];
        }
        out
    }

    /// Lane-wise `op`. Errors are reported only for lanes in `checked`;
    /// other lanes carry don't-care values.
    pub fn binop(&self, op: BinOpKind, rhs: &Self, checked: LaneMask) -> Result<Self, ArithError> {
        let mut out = *self;
        for l in 0..self.width() {
            out.lanes[l] = if checked.get(l) {
                Scalar::apply(op, self.lanes[l], rhs.lanes[l])?
            } else {
                Scalar::apply_lossy(op, self.lanes[l], rhs.lanes[l])
            };
        }
        Ok(out)
    }

    /// `out[l] = mask[l] ? op(self[l], self[perm[l]]) : self[l]`
    pub fn reduce_step(&self, perm: LanePerm, mask: LaneMask, op: ReduceOp) -> Result<Self, ArithError> {
        let mut out = *self;
        for l in mask.lanes() {
            out.lanes[l] = Scalar::apply(op.as_binop(), self.lanes[l], self.lanes[perm.get(l)])?;
        }
        Ok(out)
    }

    /// Left fold of every lane.
    pub fn hreduce(&self, op: ReduceOp) -> Result<Scalar, ArithError> {
        let mut acc = self.lanes[0];
        for &x in &self.as_slice()[1..] {
            acc = Scalar::apply(op.as_binop(), acc, x)?;
        }
        Ok(acc)
    }
}

/// Dynamic execution counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecStats {
    pub opcodes: OpcodeCounts,
    pub bytes_loaded: u64,
    pub bytes_stored: u64,
    /// Sum over memory instructions of distinct 64-byte lines touched.
    pub lines_touched: u64,
    /// Executed conflict-resolution sequences (reduce steps or HREDUCE
    /// followed by one store of the reduced value).
    pub reduction_sequences: u64,
    pub groups: u64,
}

impl ExecStats {
    pub fn count(&self, op: Opcode) -> u64 {
        self.opcodes.get(&op).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VmError {
    #[error("group {group}: {opcode} lane {lane}: offset {offset} out of range for `{array}` (len {len})")]
    OutOfRange {
        group: usize,
        opcode: Opcode,
        lane: usize,
        array: String,
        offset: i64,
        len: usize,
    },
    #[error("group {group}: operand record has {found} {what} slots, program expects {expected}")]
    Schema {
        group: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("group {group}: {opcode}: {source}")]
    Arith {
        group: usize,
        opcode: Opcode,
        #[source]
        source: ArithError,
    },
    #[error("group {group}: {opcode}: value kind does not match `{array}`")]
    Kind {
        group: usize,
        opcode: Opcode,
        array: String,
    },
    #[error("store target `{0}` is not bound")]
    MissingTarget(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Bindings(#[from] ExecError),
}

/// Machine state for one kernel execution.
pub struct Machine<'a> {
    names: &'a [String],
    inputs: Vec<Option<&'a Buffer>>,
    target_id: ArrayId,
    target: &'a mut Buffer,
    width: usize,
    regs: Vec<LaneVector>,
    acc: LaneVector,
    ops: [u64; Opcode::ALL.len()],
    stats: ExecStats,
    lines: SmallVec<[u64; MAX_LANES]>,
}

impl<'a> Machine<'a> {
    /// `inputs` holds every array except the target.
    pub fn new(
        names: &'a [String],
        inputs: &'a Bindings,
        target_id: ArrayId,
        target: &'a mut Buffer,
        shape: VectorShape,
    ) -> Self {
        let inputs = names.iter().map(|n| inputs.get(n)).collect();
        Machine {
            names,
            inputs,
            target_id,
            target,
            width: shape.width(),
            regs: Vec::new(),
            acc: LaneVector::splat(shape.width(), Scalar::Int(0)),
            ops: [0; Opcode::ALL.len()],
            stats: ExecStats::default(),
            lines: SmallVec::new(),
        }
    }

    pub fn finish(mut self) -> ExecStats {
        self.stats.opcodes = Opcode::ALL
            .iter()
            .filter(|op| self.ops[op.index()] > 0)
            .map(|&op| (op, self.ops[op.index()]))
            .collect();
        self.stats
    }

    fn buffer(&self, array: ArrayId) -> &Buffer {
        if array == self.target_id {
            self.target
        } else {
            self.inputs[array as usize].expect("bound input")
        }
    }

    fn reg(&self, r: Reg) -> &LaneVector {
        match r {
            Reg::V(n) => &self.regs[n as usize],
            Reg::Acc => &self.acc,
        }
    }

    fn set(&mut self, r: Reg, v: LaneVector) {
        match r {
            Reg::V(n) => {
                let n = n as usize;
                if n >= self.regs.len() {
                    self.regs.resize(n + 1, v);
                }
                self.regs[n] = v;
            }
            Reg::Acc => self.acc = v,
        }
    }

    fn touch(&mut self, elem_bytes: u64, offsets: impl Iterator<Item = i64>) {
        self.lines.clear();
        self.lines
            .extend(offsets.map(|o| o as u64 * elem_bytes / LINE_BYTES));
        self.lines.sort_unstable();
        self.lines.dedup();
        self.stats.lines_touched += self.lines.len() as u64;
    }

    fn load(&self, group: usize, opcode: Opcode, lane: usize, array: ArrayId, offset: i64) -> Result<Scalar, VmError> {
        let buf = self.buffer(array);
        usize::try_from(offset)
            .ok()
            .and_then(|o| buf.get(o))
            .ok_or_else(|| VmError::OutOfRange {
                group,
                opcode,
                lane,
                array: self.names[array as usize].clone(),
                offset,
                len: buf.len(),
            })
    }

    fn store(&mut self, group: usize, opcode: Opcode, lane: usize, array: ArrayId, offset: i64, value: Scalar) -> Result<(), VmError> {
        let names = self.names;
        let name = || names[array as usize].clone();
        if array != self.target_id {
            return Err(VmError::Kind { group, opcode, array: name() });
        }
        let len = self.target.len();
        let at = usize::try_from(offset).ok().filter(|&o| o < len).ok_or_else(|| VmError::OutOfRange {
            group,
            opcode,
            lane,
            array: name(),
            offset,
            len,
        })?;
        if !self.target.set(at, value) {
            return Err(VmError::Kind { group, opcode, array: name() });
        }
        Ok(())
    }

    /// Runs one section of a program for one group. `active` is the group's
    /// tail mask; arithmetic faults on other lanes are ignored.
    pub fn exec(
        &mut self,
        code: &[VInstr],
        operands: &Operands,
        group: usize,
        active: LaneMask,
    ) -> Result<(), VmError> {
        let w = self.width;
        for instr in code {
            let opcode = instr.opcode();
            self.ops[opcode.index()] += 1;
            let arith = |source| VmError::Arith { group, opcode, source };
            match *instr {
                VInstr::Vload { dst, array, slot } => {
                    let base = operands.bases[slot as usize];
                    let mut v = LaneVector::splat(w, Scalar::Int(0));
                    for l in 0..w {
                        v.lanes[l] = self.load(group, opcode, l, array, base + l as i64)?;
                    }
                    let eb = self.buffer(array).kind().size_bytes() as u64;
                    self.stats.bytes_loaded += eb * w as u64;
                    self.touch(eb, (0..w as i64).map(|l| base + l));
                    self.set(dst, v);
                }
                VInstr::Gather { dst, array, slot } => {
                    let idx = &operands.vectors[slot as usize];
                    let mut v = LaneVector::splat(w, Scalar::Int(0));
                    for l in 0..w {
                        v.lanes[l] = self.load(group, opcode, l, array, idx[l])?;
                    }
                    let eb = self.buffer(array).kind().size_bytes() as u64;
                    self.stats.bytes_loaded += eb * w as u64;
                    self.touch(eb, idx.iter().copied());
                    self.set(dst, v);
                }
                VInstr::Broadcast { dst, src } => {
                    let s = match src {
                        ScalarSrc::Const(s) => s,
                        ScalarSrc::Elem { array, slot } => {
                            let at = operands.bases[slot as usize];
                            let s = self.load(group, opcode, 0, array, at)?;
                            let eb = self.buffer(array).kind().size_bytes() as u64;
                            self.stats.bytes_loaded += eb;
                            self.touch(eb, std::iter::once(at));
                            s
                        }
                    };
                    self.set(dst, LaneVector::splat(w, s));
                }
                VInstr::Permute { dst, src, perm } => {
                    let v = self.reg(src).permute(perm);
                    self.set(dst, v);
                }
                VInstr::Select { dst, mask, a, b } => {
                    let v = LaneVector::select(mask, self.reg(a), self.reg(b));
                    self.set(dst, v);
                }
                VInstr::Binop { dst, op, a, b } => {
                    let v = self.reg(a).binop(op, self.reg(b), active).map_err(arith)?;
                    self.set(dst, v);
                }
                VInstr::ReduceStep { dst, src, perm, mask, op } => {
                    let v = self.reg(src).reduce_step(perm, mask, op).map_err(arith)?;
                    self.set(dst, v);
                }
                VInstr::Hreduce { dst, src, op } => {
                    let s = self.reg(src).hreduce(op).map_err(arith)?;
                    self.set(dst, LaneVector::splat(w, s));
                }
                VInstr::VstoreMasked { src, array, slot, mask } => {
                    let base = operands.bases[slot as usize];
                    let v = *self.reg(src);
                    for l in mask.lanes() {
                        self.store(group, opcode, l, array, base + l as i64, v.lanes[l])?;
                    }
                    let eb = self.target.kind().size_bytes() as u64;
                    self.stats.bytes_stored += eb * mask.count() as u64;
                    self.touch(eb, mask.lanes().map(|l| base + l as i64));
                }
                VInstr::Scatter { src, array, slot, mask } => {
                    let idx = &operands.vectors[slot as usize];
                    let v = *self.reg(src);
                    for l in mask.lanes() {
                        self.store(group, opcode, l, array, idx[l], v.lanes[l])?;
                    }
                    let eb = self.target.kind().size_bytes() as u64;
                    self.stats.bytes_stored += eb * mask.count() as u64;
                    self.touch(eb, mask.lanes().map(|l| idx[l]));
                }
                VInstr::AccInit { value } => self.acc = LaneVector::splat(w, value),
                VInstr::AccCombine { op, src, mask } => {
                    let src = *self.reg(src);
                    for l in mask.lanes() {
                        self.acc.lanes[l] = Scalar::apply(op.as_binop(), self.acc.lanes[l], src.lanes[l]).map_err(arith)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_schema(program: &VectorProgram, operands: &Operands, group: usize) -> Result<(), VmError> {
    let pairs = [
        ("base", program.schema.bases.len(), operands.bases.len()),
        ("vector", program.schema.vectors.len(), operands.vectors.len()),
    ];
    for (what, expected, found) in pairs {
        if expected != found {
            return Err(VmError::Schema {
                group,
                what,
                expected,
                found,
            });
        }
    }
    Ok(())
}

fn reduces(code: &[VInstr]) -> bool {
    code.iter()
        .any(|i| matches!(i.opcode(), Opcode::ReduceStep | Opcode::Hreduce))
}

/// Runs `body` then `store` of `program` for one group outside any run.
pub fn exec_group(
    machine: &mut Machine<'_>,
    program: &VectorProgram,
    operands: &Operands,
    group: usize,
    active: LaneMask,
) -> Result<(), VmError> {
    check_schema(program, operands, group)?;
    machine.stats.groups += 1;
    machine.exec(&program.body, operands, group, active)?;
    machine.exec(&program.store, operands, group, active)?;
    if reduces(&program.store) {
        machine.stats.reduction_sequences += 1;
    }
    Ok(())
}

/// Executes a built plan over `bindings`, mutating the store target.
pub fn execute_plan(plan: &Plan, bindings: &mut Bindings) -> Result<ExecStats, VmError> {
    let target_name = plan.arrays[plan.target as usize].clone();
    let mut target = bindings
        .remove(&target_name)
        .ok_or_else(|| VmError::MissingTarget(target_name.clone()))?;
    let result = execute_with(plan, bindings, &mut target);
    bindings.insert(target_name, target);
    result
}

fn execute_with(plan: &Plan, inputs: &Bindings, target: &mut Buffer) -> Result<ExecStats, VmError> {
    let mut m = Machine::new(&plan.arrays, inputs, plan.target, target, plan.shape);
    for (g, col) in plan.table.iter().enumerate() {
        let program = &plan.programs[plan.dedup.class_of[g]];
        let operands = program.schema.operands(col);
        match col.run.filter(|r| r.len > 1) {
            None => exec_group(&mut m, program, &operands, g, col.tail_mask)?,
            Some(run) => {
                check_schema(program, &operands, g)?;
                m.stats.groups += 1;
                m.exec(&program.body, &operands, g, col.tail_mask)?;
                if run.is_head(g) {
                    m.exec(&program.acc_init, &operands, g, col.tail_mask)?;
                }
                m.exec(&program.acc_step, &operands, g, col.tail_mask)?;
                if run.is_last(g) {
                    let flush = plan.flush.as_ref().expect("plan with runs has a flush program");
                    let ops = flush.schema.operands(col);
                    m.exec(&flush.store, &ops, g, LaneMask::all(plan.shape.width()))?;
                    m.stats.reduction_sequences += 1;
                }
            }
        }
    }
    Ok(m.finish())
}

/// Inspector then executor: chunk, extract, merge runs, deduplicate, lower
/// and execute every group in ascending order.
pub fn run_plan(
    seed: &CodeSeed,
    bindings: &mut Bindings,
    shape: VectorShape,
    model: &CostModel,
) -> Result<ExecStats, RunError> {
    let plan = Plan::build(seed, bindings, shape, model)?;
    Ok(execute_plan(&plan, bindings)?)
}
