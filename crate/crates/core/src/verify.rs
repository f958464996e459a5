//! Brute-force oracles. Nothing here shares code with the feature extractor
//! or the vector machine; they exist to check those.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::data::{ArithError, Buffer, ReduceOp, Scalar};

pub const MAX_ORACLE_DISTINCT: usize = 16;
pub const MAX_ORACLE_SPAN: i64 = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("buffer lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("buffer kinds differ")]
    KindMismatch,
    #[error("values and addresses differ in length: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error(transparent)]
    Arith(#[from] ArithError),
}

/// Exact minimum number of `width`-long windows covering every index, by
/// breadth-first set cover over all candidate window bases.
pub fn oracle_min_cover(indices: &[i64], width: usize) -> Result<usize, OracleError> {
    let distinct: Vec<i64> = indices.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let (Some(&lo), Some(&hi)) = (distinct.first(), distinct.last()) else {
        return Ok(0);
    };
    if distinct.len() > MAX_ORACLE_DISTINCT {
        return Err(OracleError::TooLarge(format!(
            "{} distinct indices (cap {MAX_ORACLE_DISTINCT})",
            distinct.len()
        )));
    }
    if hi - lo + 1 > MAX_ORACLE_SPAN {
        return Err(OracleError::TooLarge(format!(
            "index span {} (cap {MAX_ORACLE_SPAN})",
            hi - lo + 1
        )));
    }
    let w = width as i64;
    let mut candidates = BTreeSet::new();
    for base in (lo - w + 1)..=hi {
        let mut m = 0u32;
        for (k, &d) in distinct.iter().enumerate() {
            if base <= d && d < base + w {
                m |= 1 << k;
            }
        }
        if m != 0 {
            candidates.insert(m);
        }
    }
    let full = (1u32 << distinct.len()) - 1;
    let mut dist = vec![usize::MAX; full as usize + 1];
    dist[0] = 0;
    let mut queue = VecDeque::from([0u32]);
    while let Some(s) = queue.pop_front() {
        if s == full {
            return Ok(dist[s as usize]);
        }
        for &m in &candidates {
            let t = s | m;
            if dist[t as usize] == usize::MAX {
                dist[t as usize] = dist[s as usize] + 1;
                queue.push_back(t);
            }
        }
    }
    unreachable!("every index is covered by the window starting at it")
}

/// Sequential fold of `values` grouped by address, lanes in order.
pub fn oracle_group_fold(
    values: &[Scalar],
    addrs: &[i64],
    op: ReduceOp,
) -> Result<BTreeMap<i64, Scalar>, OracleError> {
    if values.len() != addrs.len() {
        return Err(OracleError::ShapeMismatch(values.len(), addrs.len()));
    }
    let mut out: BTreeMap<i64, Scalar> = BTreeMap::new();
    for (&v, &a) in values.iter().zip(addrs) {
        match out.get_mut(&a) {
            Some(acc) => *acc = Scalar::apply(op.as_binop(), *acc, v)?,
            None => {
                out.insert(a, v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub max_abs: f64,
    pub max_rel: f64,
    pub first_mismatch: Option<usize>,
}

impl Deviation {
    pub fn is_exact(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

fn element_dev(a: Scalar, b: Scalar) -> Result<(bool, f64, f64), OracleError> {
    match (a, b) {
        (Scalar::Int(x), Scalar::Int(y)) => {
            let abs = (x as i128 - y as i128).unsigned_abs() as f64;
            let rel = if x == y { 0.0 } else { abs / (x.unsigned_abs().max(y.unsigned_abs()) as f64) };
            Ok((x == y, abs, rel))
        }
        (Scalar::Real64(_), Scalar::Real64(_)) | (Scalar::Real32(_), Scalar::Real32(_)) => {
            let (x, y) = (a.to_f64(), b.to_f64());
            if x == y || (x.is_nan() && y.is_nan()) {
                return Ok((true, 0.0, 0.0));
            }
            let abs = (x - y).abs();
            let scale = x.abs().max(y.abs());
            Ok((false, abs, if scale > 0.0 { abs / scale } else { 0.0 }))
        }
        _ => Err(OracleError::KindMismatch),
    }
}

fn check_shapes(a: &Buffer, b: &Buffer) -> Result<(), OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::LengthMismatch(a.len(), b.len()));
    }
    if a.kind().is_integer() != b.kind().is_integer()
        || (!a.kind().is_integer() && a.kind() != b.kind())
    {
        return Err(OracleError::KindMismatch);
    }
    Ok(())
}

/// Largest absolute and relative deviation between two buffers, plus the
/// first differing element.
pub fn diff_outputs(a: &Buffer, b: &Buffer) -> Result<Deviation, OracleError> {
    check_shapes(a, b)?;
    let mut dev = Deviation {
        max_abs: 0.0,
        max_rel: 0.0,
        first_mismatch: None,
    };
    for i in 0..a.len() {
        let (same, abs, rel) = element_dev(a.get(i).unwrap(), b.get(i).unwrap())?;
        if !same && dev.first_mismatch.is_none() {
            dev.first_mismatch = Some(i);
        }
        dev.max_abs = dev.max_abs.max(abs);
        dev.max_rel = dev.max_rel.max(rel);
    }
    Ok(dev)
}

/// First element whose deviation exceeds both `abs_floor` and `rel_tol`.
pub fn first_violation(
    a: &Buffer,
    b: &Buffer,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<Option<usize>, OracleError> {
    check_shapes(a, b)?;
    for i in 0..a.len() {
        let (same, abs, rel) = element_dev(a.get(i).unwrap(), b.get(i).unwrap())?;
        if !same && abs > abs_floor && rel > rel_tol {
            return Ok(Some(i));
        }
    }
    Ok(None)
}
