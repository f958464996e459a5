//! The kernel description language ("code seed"), its validator and the
//! scalar reference interpreter every vector plan is checked against.
//!
//! A seed describes one loop iteration `i` over `0..trip_count` as an
//! expression DAG plus a single store:
//!
//! ```text
//! target[index(i)] <- target[index(i)] (combine) value(i)
//! ```
//!
//! Index subexpressions may only read immutable arrays, which is what lets
//! the inspector evaluate them before execution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ArithError, Bindings, BinOpKind, Buffer, ElemKind, ReduceOp, Scalar};
use crate::plan::{normalize_reduction_op, PreTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    AccessArray,
    DataArray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutability {
    Immutable,
    Mutable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub elem: ElemKind,
    pub role: Role,
    pub mutability: Mutability,
}

impl ArrayDecl {
    pub fn is_mutable(&self) -> bool {
        self.mutability == Mutability::Mutable
    }
}

/// Handle to a node in a seed's expression arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExprId(pub u32);

impl ExprId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ExprId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SeedExpr {
    /// `array[i]`
    LoadDirect { array: String },
    /// `array[index]`
    LoadIndirect { array: String, index: ExprId },
    Const { value: Scalar, kind: ElemKind },
    BinOp { op: BinOpKind, lhs: ExprId, rhs: ExprId },
}

impl SeedExpr {
    fn children(&self) -> impl Iterator<Item = ExprId> {
        let (a, b) = match self {
            SeedExpr::LoadIndirect { index, .. } => (Some(*index), None),
            SeedExpr::BinOp { lhs, rhs, .. } => (Some(*lhs), Some(*rhs)),
            _ => (None, None),
        };
        a.into_iter().chain(b)
    }

    fn array(&self) -> Option<&str> {
        match self {
            SeedExpr::LoadDirect { array } | SeedExpr::LoadIndirect { array, .. } => Some(array),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combine {
    Overwrite,
    Reduce(ReduceOp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Store {
    pub target: String,
    pub index: ExprId,
    pub value: ExprId,
    pub combine: Combine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSeed {
    pub decls: Vec<ArrayDecl>,
    pub nodes: Vec<SeedExpr>,
    pub trip_count: usize,
    pub store: Store,
}

/// Whether a load site reads `array[i]` or `array[expr]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Direct,
    Indirect,
}

/// A load reachable from the store value without passing through an index
/// subexpression. These are the loads a vector program has to perform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadSite {
    pub node: ExprId,
    pub array: String,
    pub kind: SiteKind,
}

impl CodeSeed {
    pub fn decl(&self, name: &str) -> Option<&ArrayDecl> {
        self.decls.iter().find(|d| d.name == name)
    }

    pub fn node(&self, id: ExprId) -> Option<&SeedExpr> {
        self.nodes.get(id.index())
    }

    pub fn target_decl(&self) -> Option<&ArrayDecl> {
        self.decl(&self.store.target)
    }

    /// Nodes of the value expression in post-order, each once, stopping at
    /// loads (their index subexpressions belong to the inspector).
    pub fn value_postorder(&self) -> Vec<ExprId> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        self.postorder_into(self.store.value, &mut seen, &mut out);
        out
    }

    fn postorder_into(&self, id: ExprId, seen: &mut BTreeSet<ExprId>, out: &mut Vec<ExprId>) {
        if !seen.insert(id) {
            return;
        }
        if let Some(SeedExpr::BinOp { lhs, rhs, .. }) = self.node(id) {
            self.postorder_into(*lhs, seen, out);
            self.postorder_into(*rhs, seen, out);
        }
        out.push(id);
    }

    /// Load sites of the value expression, in canonical (post-order) order.
    pub fn value_sites(&self) -> Vec<LoadSite> {
        self.value_postorder()
            .into_iter()
            .filter_map(|id| match self.node(id)? {
                SeedExpr::LoadDirect { array } => Some(LoadSite {
                    node: id,
                    array: array.clone(),
                    kind: SiteKind::Direct,
                }),
                SeedExpr::LoadIndirect { array, .. } => Some(LoadSite {
                    node: id,
                    array: array.clone(),
                    kind: SiteKind::Indirect,
                }),
                _ => None,
            })
            .collect()
    }

    /// Element kind of the stored value.
    pub fn value_kind(&self) -> Option<ElemKind> {
        self.target_decl().map(|d| d.elem)
    }

    /// Usage-derived roles: arrays read inside an index subexpression are
    /// access arrays, everything else is data.
    pub fn classify_roles(&self) -> BTreeMap<String, Role> {
        let mut access = BTreeSet::new();
        let mut roots = vec![self.store.index];
        roots.extend(self.nodes.iter().filter_map(|n| match n {
            SeedExpr::LoadIndirect { index, .. } => Some(*index),
            _ => None,
        }));
        for root in roots {
            self.arrays_under(root, &mut access, &mut BTreeSet::new());
        }
        self.decls
            .iter()
            .map(|d| {
                let role = if access.contains(&d.name) {
                    Role::AccessArray
                } else {
                    Role::DataArray
                };
                (d.name.clone(), role)
            })
            .collect()
    }

    fn arrays_under(&self, id: ExprId, acc: &mut BTreeSet<String>, seen: &mut BTreeSet<ExprId>) {
        if !seen.insert(id) {
            return;
        }
        let Some(node) = self.node(id) else { return };
        if let Some(a) = node.array() {
            acc.insert(a.to_string());
        }
        for c in node.children() {
            self.arrays_under(c, acc, seen);
        }
    }

    /// Evaluates an integer-valued expression for iteration `i`.
    pub fn eval_index(&self, id: ExprId, i: usize, arrays: &Bindings) -> Result<i64, ExecError> {
        match self.eval(id, i, arrays)? {
            Scalar::Int(v) => Ok(v),
            other => Err(ExecError::NotAnIndex {
                iteration: i,
                value: other,
            }),
        }
    }

    /// Evaluates `id` for iteration `i`. Assumes a validated seed.
    pub fn eval(&self, id: ExprId, i: usize, arrays: &Bindings) -> Result<Scalar, ExecError> {
        let node = self.node(id).ok_or(ExecError::DanglingNode(id))?;
        match node {
            SeedExpr::LoadDirect { array } => read(arrays, array, i, i as i64),
            SeedExpr::LoadIndirect { array, index } => {
                let at = self.eval_index(*index, i, arrays)?;
                read(arrays, array, i, at)
            }
            SeedExpr::Const { value, .. } => Ok(*value),
            SeedExpr::BinOp { op, lhs, rhs } => {
                let a = self.eval(*lhs, i, arrays)?;
                let b = self.eval(*rhs, i, arrays)?;
                Scalar::apply(*op, a, b).map_err(|source| ExecError::Arith {
                    iteration: i,
                    source,
                })
            }
        }
    }
}

fn read(arrays: &Bindings, array: &str, iteration: usize, at: i64) -> Result<Scalar, ExecError> {
    let buf = arrays.get(array).ok_or_else(|| ExecError::MissingBinding {
        array: array.to_string(),
    })?;
    usize::try_from(at)
        .ok()
        .and_then(|u| buf.get(u))
        .ok_or_else(|| ExecError::OutOfRange {
            iteration,
            array: array.to_string(),
            offset: at,
            len: buf.len(),
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("unknown array `{0}`")]
    UnknownArray(String),
    #[error("array `{0}` declared twice")]
    DuplicateDecl(String),
    #[error("index depends on mutable data (array `{0}`)")]
    IndexDependsOnMutable(String),
    #[error("value expression reads the mutable store target `{0}`")]
    ValueReadsTarget(String),
    #[error("access array `{0}` must be an immutable index array")]
    BadAccessArray(String),
    #[error("store target `{0}` is not mutable")]
    TargetNotMutable(String),
    #[error("array `{0}` is mutable but never stored to")]
    StrayMutable(String),
    #[error("node {0} references a node that does not exist")]
    DanglingNode(ExprId),
    #[error("cycle through node {0}")]
    Cycle(ExprId),
    #[error("type mismatch at {node}: {detail}")]
    TypeMismatch { node: ExprId, detail: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("seed is invalid: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("array `{array}` is not bound")]
    MissingBinding { array: String },
    #[error("array `{array}` is bound as {found}, declared {expected}")]
    BindingKind {
        array: String,
        expected: ElemKind,
        found: ElemKind,
    },
    #[error("iteration {iteration}: offset {offset} out of range for `{array}` (len {len})")]
    OutOfRange {
        iteration: usize,
        array: String,
        offset: i64,
        len: usize,
    },
    #[error("iteration {iteration}: index expression produced {value}")]
    NotAnIndex { iteration: usize, value: Scalar },
    #[error("iteration {iteration}: {source}")]
    Arith {
        iteration: usize,
        #[source]
        source: ArithError,
    },
    #[error("dangling node {0}")]
    DanglingNode(ExprId),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeedError {
    #[error("{op} reduction cannot be normalized for {kind} data")]
    UnsupportedReduction { op: BinOpKind, kind: ElemKind },
    #[error("store target `{0}` is not declared")]
    UnknownTarget(String),
}

/// Checks every seed invariant and returns all violations found.
pub fn validate_seed(seed: &CodeSeed) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut names = BTreeSet::new();
    for d in &seed.decls {
        if !names.insert(d.name.as_str()) {
            out.push(Violation::DuplicateDecl(d.name.clone()));
        }
        if d.role == Role::AccessArray && (d.elem != ElemKind::Index || d.is_mutable()) {
            out.push(Violation::BadAccessArray(d.name.clone()));
        }
    }

    let target = &seed.store.target;
    match seed.decl(target) {
        None => out.push(Violation::UnknownArray(target.clone())),
        Some(d) if !d.is_mutable() => out.push(Violation::TargetNotMutable(target.clone())),
        Some(_) => {}
    }
    for d in seed.decls.iter().filter(|d| d.is_mutable() && &d.name != target) {
        out.push(Violation::StrayMutable(d.name.clone()));
    }

    let n = seed.nodes.len();
    let mut structural_ok = true;
    for (k, node) in seed.nodes.iter().enumerate() {
        for c in node.children() {
            if c.index() >= n {
                out.push(Violation::DanglingNode(ExprId(k as u32)));
                structural_ok = false;
            }
        }
        if let Some(a) = node.array() {
            if seed.decl(a).is_none() {
                out.push(Violation::UnknownArray(a.to_string()));
            }
        }
    }
    for root in [seed.store.index, seed.store.value] {
        if root.index() >= n {
            out.push(Violation::DanglingNode(root));
            structural_ok = false;
        }
    }
    if structural_ok {
        if let Some(at) = find_cycle(seed) {
            out.push(Violation::Cycle(at));
            structural_ok = false;
        }
    }

    if structural_ok {
        let kinds = infer_kinds(seed, &mut out);
        let index_kind = |id: ExprId| kinds[id.index()];
        for (k, node) in seed.nodes.iter().enumerate() {
            if let SeedExpr::LoadIndirect { index, .. } = node {
                check_index_position(seed, *index, &mut out);
                if let Some(kind) = index_kind(*index) {
                    if !kind.is_integer() {
                        out.push(Violation::TypeMismatch {
                            node: ExprId(k as u32),
                            detail: format!("index subexpression has kind {kind}"),
                        });
                    }
                }
            }
        }
        check_index_position(seed, seed.store.index, &mut out);
        if let Some(kind) = index_kind(seed.store.index) {
            if !kind.is_integer() {
                out.push(Violation::TypeMismatch {
                    node: seed.store.index,
                    detail: format!("store index has kind {kind}"),
                });
            }
        }
        if let (Some(vk), Some(d)) = (index_kind(seed.store.value), seed.decl(target)) {
            if vk != d.elem {
                out.push(Violation::TypeMismatch {
                    node: seed.store.value,
                    detail: format!("value kind {vk} stored into {} array `{target}`", d.elem),
                });
            }
        }
        for id in seed.value_postorder() {
            if let Some(a) = seed.node(id).and_then(SeedExpr::array) {
                if a == target {
                    out.push(Violation::ValueReadsTarget(a.to_string()));
                }
            }
        }
    }

    out.dedup();
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn check_index_position(seed: &CodeSeed, root: ExprId, out: &mut Vec<Violation>) {
    let mut arrays = BTreeSet::new();
    seed.arrays_under(root, &mut arrays, &mut BTreeSet::new());
    for a in arrays {
        if seed.decl(&a).is_some_and(ArrayDecl::is_mutable) {
            let v = Violation::IndexDependsOnMutable(a);
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
}

fn find_cycle(seed: &CodeSeed) -> Option<ExprId> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; seed.nodes.len()];
    for start in 0..seed.nodes.len() {
        if color[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, false)];
        while let Some((k, expanded)) = stack.pop() {
            if expanded {
                color[k] = 2;
                continue;
            }
            if color[k] == 2 {
                continue;
            }
            color[k] = 1;
            stack.push((k, true));
            for c in seed.nodes[k].children() {
                match color[c.index()] {
                    1 => return Some(c),
                    0 => stack.push((c.index(), false)),
                    _ => {}
                }
            }
        }
    }
    None
}

fn infer_kinds(seed: &CodeSeed, out: &mut Vec<Violation>) -> Vec<Option<ElemKind>> {
    let mut kinds: Vec<Option<ElemKind>> = vec![None; seed.nodes.len()];
    let mut done = vec![false; seed.nodes.len()];
    fn go(
        seed: &CodeSeed,
        k: usize,
        kinds: &mut Vec<Option<ElemKind>>,
        done: &mut Vec<bool>,
        out: &mut Vec<Violation>,
    ) -> Option<ElemKind> {
        if done[k] {
            return kinds[k];
        }
        let kind = match &seed.nodes[k] {
            SeedExpr::LoadDirect { array } => seed.decl(array).map(|d| d.elem),
            SeedExpr::LoadIndirect { array, index } => {
                go(seed, index.index(), kinds, done, out);
                seed.decl(array).map(|d| d.elem)
            }
            SeedExpr::Const { value, kind } => {
                if !value.fits(*kind) {
                    out.push(Violation::TypeMismatch {
                        node: ExprId(k as u32),
                        detail: format!("constant {value} is not a {kind}"),
                    });
                }
                Some(*kind)
            }
            SeedExpr::BinOp { lhs, rhs, .. } => {
                let a = go(seed, lhs.index(), kinds, done, out);
                let b = go(seed, rhs.index(), kinds, done, out);
                match (a, b) {
                    (Some(a), Some(b)) if a != b => {
                        out.push(Violation::TypeMismatch {
                            node: ExprId(k as u32),
                            detail: format!("operands are {a} and {b}"),
                        });
                        None
                    }
                    (Some(a), Some(_)) => Some(a),
                    _ => None,
                }
            }
        };
        done[k] = true;
        kinds[k] = kind;
        kind
    }
    for k in 0..seed.nodes.len() {
        go(seed, k, &mut kinds, &mut done, out);
    }
    kinds
}

/// Runs iterations `0..trip_count` strictly in order, mutating the store
/// target inside `bindings`. This is the correctness oracle for every plan.
pub fn scalar_execute(seed: &CodeSeed, bindings: &mut Bindings) -> Result<(), ExecError> {
    validate_seed(seed).map_err(ExecError::Invalid)?;
    check_bindings(seed, bindings)?;
    let target_name = seed.store.target.clone();
    let mut target = bindings
        .remove(&target_name)
        .expect("checked by check_bindings");
    let result = run_iterations(seed, bindings, &mut target);
    bindings.insert(target_name, target);
    result
}

fn run_iterations(seed: &CodeSeed, arrays: &Bindings, target: &mut Buffer) -> Result<(), ExecError> {
    let store = &seed.store;
    for i in 0..seed.trip_count {
        let at = seed.eval_index(store.index, i, arrays)?;
        let value = seed.eval(store.value, i, arrays)?;
        let slot = usize::try_from(at)
            .ok()
            .filter(|&u| u < target.len())
            .ok_or_else(|| ExecError::OutOfRange {
                iteration: i,
                array: store.target.clone(),
                offset: at,
                len: target.len(),
            })?;
        let new = match store.combine {
            Combine::Overwrite => value,
            Combine::Reduce(op) => {
                let old = target.get(slot).expect("range checked");
                Scalar::apply(op.as_binop(), old, value).map_err(|source| ExecError::Arith {
                    iteration: i,
                    source,
                })?
            }
        };
        target.set(slot, new);
    }
    Ok(())
}

/// Every declared array must be bound with its declared kind.
pub fn check_bindings(seed: &CodeSeed, bindings: &Bindings) -> Result<(), ExecError> {
    for d in &seed.decls {
        let buf = bindings.get(&d.name).ok_or_else(|| ExecError::MissingBinding {
            array: d.name.clone(),
        })?;
        if buf.kind() != d.elem {
            return Err(ExecError::BindingKind {
                array: d.name.clone(),
                expected: d.elem,
                found: buf.kind(),
            });
        }
    }
    Ok(())
}

/// Incremental construction of a [`CodeSeed`].
#[derive(Debug, Clone, Default)]
pub struct SeedBuilder {
    decls: Vec<ArrayDecl>,
    nodes: Vec<SeedExpr>,
    trip_count: usize,
}

impl SeedBuilder {
    pub fn new(trip_count: usize) -> Self {
        SeedBuilder {
            trip_count,
            ..Default::default()
        }
    }

    pub fn declare(&mut self, name: &str, elem: ElemKind, role: Role, mutability: Mutability) -> &mut Self {
        self.decls.push(ArrayDecl {
            name: name.to_string(),
            elem,
            role,
            mutability,
        });
        self
    }

    /// Immutable index array used for addressing.
    pub fn access(&mut self, name: &str) -> &mut Self {
        self.declare(name, ElemKind::Index, Role::AccessArray, Mutability::Immutable)
    }

    /// Immutable data array.
    pub fn input(&mut self, name: &str, elem: ElemKind) -> &mut Self {
        self.declare(name, elem, Role::DataArray, Mutability::Immutable)
    }

    /// The mutable array the store writes.
    pub fn output(&mut self, name: &str, elem: ElemKind) -> &mut Self {
        self.declare(name, elem, Role::DataArray, Mutability::Mutable)
    }

    fn push(&mut self, e: SeedExpr) -> ExprId {
        self.nodes.push(e);
        ExprId(self.nodes.len() as u32 - 1)
    }

    pub fn load(&mut self, array: &str) -> ExprId {
        self.push(SeedExpr::LoadDirect {
            array: array.to_string(),
        })
    }

    pub fn load_at(&mut self, array: &str, index: ExprId) -> ExprId {
        self.push(SeedExpr::LoadIndirect {
            array: array.to_string(),
            index,
        })
    }

    pub fn constant(&mut self, value: Scalar, kind: ElemKind) -> ExprId {
        self.push(SeedExpr::Const { value, kind })
    }

    pub fn bin(&mut self, op: BinOpKind, lhs: ExprId, rhs: ExprId) -> ExprId {
        self.push(SeedExpr::BinOp { op, lhs, rhs })
    }

    pub fn finish(self, target: &str, index: ExprId, value: ExprId, combine: Combine) -> CodeSeed {
        CodeSeed {
            decls: self.decls,
            nodes: self.nodes,
            trip_count: self.trip_count,
            store: Store {
                target: target.to_string(),
                index,
                value,
                combine,
            },
        }
    }

    /// `target[index] <- target[index] op value` for any of add/sub/mul/div;
    /// sub and div are rewritten into add/mul over a transformed value.
    pub fn finish_reduction(
        mut self,
        target: &str,
        index: ExprId,
        value: ExprId,
        op: BinOpKind,
    ) -> Result<CodeSeed, SeedError> {
        let kind = self
            .decls
            .iter()
            .find(|d| d.name == target)
            .map(|d| d.elem)
            .ok_or_else(|| SeedError::UnknownTarget(target.to_string()))?;
        let (reduce, pre) = normalize_reduction_op(op);
        let value = match pre {
            PreTransform::Identity => value,
            PreTransform::Negate => {
                let zero = self.constant(kind.identity(ReduceOp::Add), kind);
                self.bin(BinOpKind::Sub, zero, value)
            }
            PreTransform::Reciprocal => {
                if kind.is_integer() {
                    return Err(SeedError::UnsupportedReduction { op, kind });
                }
                let one = self.constant(kind.identity(ReduceOp::Mul), kind);
                self.bin(BinOpKind::Div, one, value)
            }
        };
        Ok(self.finish(target, index, value, Combine::Reduce(reduce)))
    }
}

/// `y[row[i]] += value[i] * x[col[i]]` over real-64 data.
pub fn build_spmv_seed(n_nnz: usize) -> CodeSeed {
    build_spmv_seed_with(n_nnz, ElemKind::Real64)
}

/// SpMV seed over data arrays of `kind`.
pub fn build_spmv_seed_with(n_nnz: usize, kind: ElemKind) -> CodeSeed {
    let mut b = SeedBuilder::new(n_nnz);
    b.access("row_ptr")
        .access("col_ptr")
        .input("value", kind)
        .input("x", kind)
        .output("y", kind);
    let row = b.load("row_ptr");
    let col = b.load("col_ptr");
    let v = b.load("value");
    let xv = b.load_at("x", col);
    let prod = b.bin(BinOpKind::Mul, v, xv);
    b.finish("y", row, prod, Combine::Reduce(ReduceOp::Add))
}

/// `sum[n2[i]] += rank[n1[i]] * nneighbor[n1[i]]` over real-64 data, where
/// `nneighbor` holds the reciprocal out-degree.
pub fn build_pagerank_seed(n_edges: usize) -> CodeSeed {
    build_pagerank_seed_with(n_edges, ElemKind::Real64)
}

pub fn build_pagerank_seed_with(n_edges: usize, kind: ElemKind) -> CodeSeed {
    let mut b = SeedBuilder::new(n_edges);
    b.access("n1")
        .access("n2")
        .input("rank", kind)
        .input("nneighbor", kind)
        .output("sum", kind);
    let src = b.load("n1");
    let dst = b.load("n2");
    let r = b.load_at("rank", src);
    let nb = b.load_at("nneighbor", src);
    let contrib = b.bin(BinOpKind::Mul, r, nb);
    b.finish("sum", dst, contrib, Combine::Reduce(ReduceOp::Add))
}
