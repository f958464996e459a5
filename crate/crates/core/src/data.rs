//! Element kinds, scalar arithmetic and the array buffers kernels run over.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element type of a declared array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElemKind {
    /// 64-bit signed index; negative values are never valid offsets.
    Index,
    Int64,
    Real64,
    Real32,
}

impl ElemKind {
    pub fn size_bytes(self) -> usize {
        match self {
            ElemKind::Real32 => 4,
            _ => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, ElemKind::Index | ElemKind::Int64)
    }

    /// Identity element of `op` in this kind.
    pub fn identity(self, op: ReduceOp) -> Scalar {
        match (self.is_integer(), self, op) {
            (true, _, ReduceOp::Add) => Scalar::Int(0),
            (true, _, ReduceOp::Mul) => Scalar::Int(1),
            (false, ElemKind::Real32, ReduceOp::Add) => Scalar::Real32(0.0),
            (false, ElemKind::Real32, ReduceOp::Mul) => Scalar::Real32(1.0),
            (false, _, ReduceOp::Add) => Scalar::Real64(0.0),
            (false, _, ReduceOp::Mul) => Scalar::Real64(1.0),
        }
    }

    /// Converts an `f64` into this kind. Integer kinds truncate toward zero.
    pub fn scalar_from_f64(self, v: f64) -> Scalar {
        match self {
            ElemKind::Index | ElemKind::Int64 => Scalar::Int(v as i64),
            ElemKind::Real64 => Scalar::Real64(v),
            ElemKind::Real32 => Scalar::Real32(v as f32),
        }
    }
}

impl fmt::Display for ElemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ElemKind::Index => "index",
            ElemKind::Int64 => "int64",
            ElemKind::Real64 => "real64",
            ElemKind::Real32 => "real32",
        };
        f.write_str(s)
    }
}

/// Binary operators available in seed expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOpKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl fmt::Display for BinOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BinOpKind::Add => "add",
            BinOpKind::Sub => "sub",
            BinOpKind::Mul => "mul",
            BinOpKind::Div => "div",
        };
        f.write_str(s)
    }
}

/// Associative, commutative operators a reduction may combine with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceOp {
    Add,
    Mul,
}

impl ReduceOp {
    pub fn as_binop(self) -> BinOpKind {
        match self {
            ReduceOp::Add => BinOpKind::Add,
            ReduceOp::Mul => BinOpKind::Mul,
        }
    }
}

impl fmt::Display for ReduceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.as_binop().fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArithError {
    #[error("integer overflow in {op} of {lhs} and {rhs}")]
    Overflow { op: BinOpKind, lhs: i64, rhs: i64 },
    #[error("integer division by zero")]
    DivideByZero,
    #[error("operand kinds differ: {lhs:?} vs {rhs:?}")]
    KindMismatch { lhs: Scalar, rhs: Scalar },
}

/// One element value. `Int` carries both index and int64 elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scalar {
    Int(i64),
    Real64(f64),
    Real32(f32),
}

impl Scalar {
    pub fn apply(op: BinOpKind, lhs: Scalar, rhs: Scalar) -> Result<Scalar, ArithError> {
        match (lhs, rhs) {
            (Scalar::Int(a), Scalar::Int(b)) => {
                let r = match op {
                    BinOpKind::Add => a.checked_add(b),
                    BinOpKind::Sub => a.checked_sub(b),
                    BinOpKind::Mul => a.checked_mul(b),
                    BinOpKind::Div => {
                        if b == 0 {
                            return Err(ArithError::DivideByZero);
                        }
                        a.checked_div(b)
                    }
                };
                r.map(Scalar::Int)
                    .ok_or(ArithError::Overflow { op, lhs: a, rhs: b })
            }
            (Scalar::Real64(a), Scalar::Real64(b)) => Ok(Scalar::Real64(real_op(op, a, b))),
            (Scalar::Real32(a), Scalar::Real32(b)) => Ok(Scalar::Real32(real_op(op, a, b))),
            _ => Err(ArithError::KindMismatch { lhs, rhs }),
        }
    }

    /// Like [`Scalar::apply`] but never fails; used for lanes whose result is discarded.
    pub fn apply_lossy(op: BinOpKind, lhs: Scalar, rhs: Scalar) -> Scalar {
        match (lhs, rhs) {
            (Scalar::Int(a), Scalar::Int(b)) => Scalar::Int(match op {
                BinOpKind::Add => a.wrapping_add(b),
                BinOpKind::Sub => a.wrapping_sub(b),
                BinOpKind::Mul => a.wrapping_mul(b),
                BinOpKind::Div => a.checked_div(b).unwrap_or(0),
            }),
            _ => Scalar::apply(op, lhs, rhs).unwrap_or(lhs),
        }
    }

    pub fn as_int(self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Scalar::Int(v) => v as f64,
            Scalar::Real64(v) => v,
            Scalar::Real32(v) => v as f64,
        }
    }

    /// Whether this value can be stored into an array of `kind`.
    pub fn fits(self, kind: ElemKind) -> bool {
        matches!(
            (self, kind),
            (Scalar::Int(_), ElemKind::Index | ElemKind::Int64)
                | (Scalar::Real64(_), ElemKind::Real64)
                | (Scalar::Real32(_), ElemKind::Real32)
        )
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Real64(v) => write!(f, "{v}"),
            Scalar::Real32(v) => write!(f, "{v}"),
        }
    }
}

fn real_op<T>(op: BinOpKind, a: T, b: T) -> T
where
    T: std::ops::Add<Output = T>
        + std::ops::Sub<Output = T>
        + std::ops::Mul<Output = T>
        + std::ops::Div<Output = T>,
{
    match op {
        BinOpKind::Add => a + b,
        BinOpKind::Sub => a - b,
        BinOpKind::Mul => a * b,
        BinOpKind::Div => a / b,
    }
}

/// A typed, growable array bound to a seed array name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Buffer {
    Index(Vec<i64>),
    Int64(Vec<i64>),
    Real64(Vec<f64>),
    Real32(Vec<f32>),
}

impl Buffer {
    pub fn zeros(kind: ElemKind, len: usize) -> Buffer {
        match kind {
            ElemKind::Index => Buffer::Index(vec![0; len]),
            ElemKind::Int64 => Buffer::Int64(vec![0; len]),
            ElemKind::Real64 => Buffer::Real64(vec![0.0; len]),
            ElemKind::Real32 => Buffer::Real32(vec![0.0; len]),
        }
    }

    /// Builds a buffer of `kind` from real values (integers truncate).
    pub fn from_f64s(kind: ElemKind, values: &[f64]) -> Buffer {
        match kind {
            ElemKind::Index => Buffer::Index(values.iter().map(|&v| v as i64).collect()),
            ElemKind::Int64 => Buffer::Int64(values.iter().map(|&v| v as i64).collect()),
            ElemKind::Real64 => Buffer::Real64(values.to_vec()),
            ElemKind::Real32 => Buffer::Real32(values.iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn kind(&self) -> ElemKind {
        match self {
            Buffer::Index(_) => ElemKind::Index,
            Buffer::Int64(_) => ElemKind::Int64,
            Buffer::Real64(_) => ElemKind::Real64,
            Buffer::Real32(_) => ElemKind::Real32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Buffer::Index(v) | Buffer::Int64(v) => v.len(),
            Buffer::Real64(v) => v.len(),
            Buffer::Real32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, at: usize) -> Option<Scalar> {
        match self {
            Buffer::Index(v) | Buffer::Int64(v) => v.get(at).copied().map(Scalar::Int),
            Buffer::Real64(v) => v.get(at).copied().map(Scalar::Real64),
            Buffer::Real32(v) => v.get(at).copied().map(Scalar::Real32),
        }
    }

    /// Stores `value` at `at`. Returns false on a bad offset or a kind mismatch.
    pub fn set(&mut self, at: usize, value: Scalar) -> bool {
        match (self, value) {
            (Buffer::Index(v) | Buffer::Int64(v), Scalar::Int(x)) if at < v.len() => v[at] = x,
            (Buffer::Real64(v), Scalar::Real64(x)) if at < v.len() => v[at] = x,
            (Buffer::Real32(v), Scalar::Real32(x)) if at < v.len() => v[at] = x,
            _ => return false,
        }
        true
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.get(i).map(Scalar::to_f64).unwrap_or(0.0))
            .collect()
    }

    /// Little-endian bytes of every element, used for checksums.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Buffer::Index(v) | Buffer::Int64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Buffer::Real64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Buffer::Real32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

/// Array name to buffer.
pub type Bindings = BTreeMap<String, Buffer>;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
