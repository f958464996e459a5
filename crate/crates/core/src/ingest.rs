//! Dataset loading: MatrixMarket coordinate files, SNAP-style edge lists and
//! deterministic synthetic matrices, plus the bindings each kernel consumes.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Bindings, Buffer, ElemKind};

/// Sparse matrix in canonical COO form: row-major sorted, no duplicate
/// coordinates, 0-based indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_idx: Vec<i64>,
    pub col_idx: Vec<i64>,
    pub values: Vec<f64>,
}

impl CooMatrix {
    /// Canonicalizes arbitrary triplets: sorts by (row, col) and sums duplicates.
    ///
    /// Panics if a coordinate lies outside `rows x cols`.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        for &(r, c, _) in &triplets {
            assert!(r < rows && c < cols, "entry ({r},{c}) outside {rows}x{cols}");
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut m = CooMatrix {
            rows,
            cols,
            row_idx: Vec::with_capacity(triplets.len()),
            col_idx: Vec::with_capacity(triplets.len()),
            values: Vec::with_capacity(triplets.len()),
        };
        for (r, c, v) in triplets {
            let (r, c) = (r as i64, c as i64);
            if m.row_idx.last() == Some(&r) && m.col_idx.last() == Some(&c) {
                *m.values.last_mut().unwrap() += v;
            } else {
                m.row_idx.push(r);
                m.col_idx.push(c);
                m.values.push(v);
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.row_idx
            .iter()
            .zip(&self.col_idx)
            .zip(&self.values)
            .map(|((&r, &c), &v)| (r as usize, c as usize, v))
    }

    /// Dense row-major materialization; test-sized matrices only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }

    /// Interprets every stored entry `(r, c)` as an edge `r -> c`.
    pub fn to_edge_list(&self) -> EdgeList {
        let n = self.rows.max(self.cols);
        EdgeList::from_pairs(n, self.row_idx.iter().copied().zip(self.col_idx.iter().copied()))
    }

    /// Bindings for the SpMV seed with data arrays of `kind`.
    pub fn spmv_bindings(&self, kind: ElemKind, x: &[f64]) -> Bindings {
        assert_eq!(x.len(), self.cols, "x length must equal column count");
        let mut b = Bindings::new();
        b.insert("row_ptr".into(), Buffer::Index(self.row_idx.clone()));
        b.insert("col_ptr".into(), Buffer::Index(self.col_idx.clone()));
        b.insert("value".into(), Buffer::from_f64s(kind, &self.values));
        b.insert("x".into(), Buffer::from_f64s(kind, x));
        b.insert("y".into(), Buffer::zeros(kind, self.rows));
        b
    }
}

/// Deterministic small-integer right-hand side used by the CLI.
pub fn default_x(cols: usize) -> Vec<f64> {
    (0..cols).map(|j| (j % 5 + 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeList {
    pub n_vertices: usize,
    pub src: Vec<i64>,
    pub dst: Vec<i64>,
    pub out_degree: Vec<usize>,
}

impl EdgeList {
    /// Panics if an endpoint is outside `0..n_vertices`.
    pub fn from_pairs(n_vertices: usize, pairs: impl IntoIterator<Item = (i64, i64)>) -> Self {
        let mut e = EdgeList {
            n_vertices,
            src: Vec::new(),
            dst: Vec::new(),
            out_degree: vec![0; n_vertices],
        };
        for (s, d) in pairs {
            assert!(
                (0..n_vertices as i64).contains(&s) && (0..n_vertices as i64).contains(&d),
                "edge {s}->{d} outside {n_vertices} vertices"
            );
            e.src.push(s);
            e.dst.push(d);
            e.out_degree[s as usize] += 1;
        }
        e
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    /// Pattern matrix with a 1.0 at every edge (duplicate edges summed).
    pub fn to_coo(&self) -> CooMatrix {
        let t = self
            .src
            .iter()
            .zip(&self.dst)
            .map(|(&s, &d)| (s as usize, d as usize, 1.0))
            .collect();
        CooMatrix::from_triplets(self.n_vertices, self.n_vertices, t)
    }

    /// Bindings for the PageRank seed. Real kinds get `nneighbor = 1/out_degree`;
    /// integer kinds get the out-degree itself so results stay exact.
    pub fn pagerank_bindings(&self, kind: ElemKind) -> Bindings {
        let rank: Vec<f64> = (0..self.n_vertices).map(|v| (v % 4 + 1) as f64).collect();
        let nneighbor: Vec<f64> = self
            .out_degree
            .iter()
            .map(|&d| match (kind.is_integer(), d) {
                (true, d) => d as f64,
                (false, 0) => 0.0,
                (false, d) => 1.0 / d as f64,
            })
            .collect();
        let mut b = Bindings::new();
        b.insert("n1".into(), Buffer::Index(self.src.clone()));
        b.insert("n2".into(), Buffer::Index(self.dst.clone()));
        b.insert("rank".into(), Buffer::from_f64s(kind, &rank));
        b.insert("nneighbor".into(), Buffer::from_f64s(kind, &nneighbor));
        b.insert("sum".into(), Buffer::zeros(kind, self.n_vertices));
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("only coordinate format is supported, found `{0}`")]
    NotCoordinate(String),
    #[error("unsupported {0}")]
    Unsupported(String),
    #[error("malformed size line")]
    BadSize,
    #[error("malformed entry: {0}")]
    BadEntry(String),
    #[error("entry ({row},{col}) outside declared {rows}x{cols}")]
    OutOfBounds {
        row: i64,
        col: i64,
        rows: usize,
        cols: usize,
    },
    #[error("expected {expected} entries, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("more entries than the {0} declared")]
    TooManyEntries(usize),
    #[error("non-integer token `{0}`")]
    BadToken(String),
    #[error("vertex id {id} not below {n}")]
    VertexOutOfRange { id: i64, n: usize },
    #[error("read failed: {0}")]
    Io(String),
}

fn perr(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

/// Parses a MatrixMarket `coordinate` stream into a canonical [`CooMatrix`].
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<CooMatrix, ParseError> {
    let mut lines = reader.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (hline, header) = match lines.next() {
        Some((n, Ok(l))) => (n, l),
        Some((n, Err(e))) => return Err(perr(n, ParseErrorKind::Io(e.to_string()))),
        None => return Err(perr(1, ParseErrorKind::MalformedHeader("empty stream".into()))),
    };
    let (field, symmetric) = parse_header(&header).map_err(|k| perr(hline, k))?;

    let mut last_line = hline;
    let mut size = None;
    let mut triplets = Vec::new();
    let mut declared = 0usize;
    let mut stored = 0usize;
    for (n, line) in lines {
        let line = line.map_err(|e| perr(n, ParseErrorKind::Io(e.to_string())))?;
        last_line = n;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        let Some((rows, cols)) = size else {
            let nums: Option<Vec<usize>> = toks.iter().map(|s| s.parse().ok()).collect();
            match nums.as_deref() {
                Some([r, c, z]) => {
                    size = Some((*r, *c));
                    declared = *z;
                    triplets.reserve(declared);
                }
                _ => return Err(perr(n, ParseErrorKind::BadSize)),
            }
            continue;
        };
        if stored == declared {
            return Err(perr(n, ParseErrorKind::TooManyEntries(declared)));
        }
        let want = if field == Field::Pattern { 2 } else { 3 };
        if toks.len() < want {
            return Err(perr(n, ParseErrorKind::BadEntry(t.to_string())));
        }
        let bad = || perr(n, ParseErrorKind::BadEntry(t.to_string()));
        let r: i64 = toks[0].parse().map_err(|_| bad())?;
        let c: i64 = toks[1].parse().map_err(|_| bad())?;
        let v: f64 = match field {
            Field::Pattern => 1.0,
            Field::Integer => toks[2].parse::<i64>().map_err(|_| bad())? as f64,
            Field::Real => toks[2].parse().map_err(|_| bad())?,
        };
        if r < 1 || c < 1 || r as usize > rows || c as usize > cols {
            return Err(perr(
                n,
                ParseErrorKind::OutOfBounds {
                    row: r,
                    col: c,
                    rows,
                    cols,
                },
            ));
        }
        let (r0, c0) = (r as usize - 1, c as usize - 1);
        triplets.push((r0, c0, v));
        if symmetric && r0 != c0 {
            triplets.push((c0, r0, v));
        }
        stored += 1;
    }
    let Some((rows, cols)) = size else {
        return Err(perr(last_line + 1, ParseErrorKind::BadSize));
    };
    if stored < declared {
        return Err(perr(
            last_line + 1,
            ParseErrorKind::Truncated {
                expected: declared,
                found: stored,
            },
        ));
    }
    Ok(CooMatrix::from_triplets(rows, cols, triplets))
}

fn parse_header(line: &str) -> Result<(Field, bool), ParseErrorKind> {
    let toks: Vec<String> = line.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if toks.len() != 5 || toks[0] != "%%matrixmarket" || toks[1] != "matrix" {
        return Err(ParseErrorKind::MalformedHeader(line.to_string()));
    }
    if toks[2] != "coordinate" {
        return Err(ParseErrorKind::NotCoordinate(toks[2].clone()));
    }
    let field = match toks[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(ParseErrorKind::Unsupported(format!("field `{other}`"))),
    };
    let symmetric = match toks[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(ParseErrorKind::Unsupported(format!("symmetry `{other}`"))),
    };
    Ok((field, symmetric))
}

/// Emits a `real general` coordinate file that [`parse_matrix_market`] reads back exactly.
pub fn write_matrix_market(m: &CooMatrix) -> String {
    let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", m.rows, m.cols, m.nnz());
    for (r, c, v) in m.triplets() {
        let _ = writeln!(s, "{} {} {v:?}", r + 1, c + 1);
    }
    s
}

pub fn read_matrix_market(path: &Path) -> Result<CooMatrix, ParseError> {
    let f = File::open(path).map_err(|e| perr(0, ParseErrorKind::Io(e.to_string())))?;
    parse_matrix_market(BufReader::new(f))
}

/// Parses `src dst` lines (`#` starts a comment) against a known vertex count.
pub fn parse_edge_list<R: BufRead>(reader: R, n_vertices: usize) -> Result<EdgeList, ParseError> {
    let pairs = read_pairs(reader)?;
    for &(line, s, d) in &pairs {
        for id in [s, d] {
            if id < 0 || id as usize >= n_vertices {
                return Err(perr(line, ParseErrorKind::VertexOutOfRange { id, n: n_vertices }));
            }
        }
    }
    Ok(EdgeList::from_pairs(n_vertices, pairs.into_iter().map(|(_, s, d)| (s, d))))
}

/// Like [`parse_edge_list`] with the vertex count taken as `max id + 1`.
pub fn parse_edge_list_inferred<R: BufRead>(reader: R) -> Result<EdgeList, ParseError> {
    let pairs = read_pairs(reader)?;
    if let Some(&(line, s, d)) = pairs.iter().find(|&&(_, s, d)| s < 0 || d < 0) {
        let id = s.min(d);
        return Err(perr(line, ParseErrorKind::VertexOutOfRange { id, n: 0 }));
    }
    let n = pairs.iter().map(|&(_, s, d)| s.max(d) + 1).max().unwrap_or(0) as usize;
    Ok(EdgeList::from_pairs(n, pairs.into_iter().map(|(_, s, d)| (s, d))))
}

fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<(usize, i64, i64)>, ParseError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let n = k + 1;
        let line = line.map_err(|e| perr(n, ParseErrorKind::Io(e.to_string())))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut toks = t.split_whitespace();
        let mut next = || -> Result<i64, ParseError> {
            let tok = toks
                .next()
                .ok_or_else(|| perr(n, ParseErrorKind::BadEntry(t.to_string())))?;
            tok.parse()
                .map_err(|_| perr(n, ParseErrorKind::BadToken(tok.to_string())))
        };
        let s = next()?;
        let d = next()?;
        out.push((n, s, d));
    }
    Ok(out)
}

/// Fully dense matrix in row-major COO. Values are small deterministic
/// integers so integer and real kernels agree exactly.
pub fn gen_dense(rows: usize, cols: usize) -> CooMatrix {
    let nnz = rows * cols;
    let mut m = CooMatrix {
        rows,
        cols,
        row_idx: Vec::with_capacity(nnz),
        col_idx: Vec::with_capacity(nnz),
        values: Vec::with_capacity(nnz),
    };
    for r in 0..rows {
        for c in 0..cols {
            m.row_idx.push(r as i64);
            m.col_idx.push(c as i64);
            m.values.push(dense_value(r, c));
        }
    }
    m
}

fn dense_value(r: usize, c: usize) -> f64 {
    ((r * 7 + c * 3) % 11 + 1) as f64
}

/// `nnz_per_row` distinct random columns in every row, values are nonzero
/// integers in `-9..=9`. Deterministic for a given `seed`.
///
/// Panics if `nnz_per_row > cols`.
pub fn gen_random(rows: usize, cols: usize, nnz_per_row: usize, seed: u64) -> CooMatrix {
    assert!(nnz_per_row <= cols, "nnz_per_row {nnz_per_row} exceeds {cols} columns");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = CooMatrix {
        rows,
        cols,
        row_idx: Vec::with_capacity(rows * nnz_per_row),
        col_idx: Vec::with_capacity(rows * nnz_per_row),
        values: Vec::with_capacity(rows * nnz_per_row),
    };
    for r in 0..rows {
        let mut picked = sample(&mut rng, cols, nnz_per_row).into_vec();
        picked.sort_unstable();
        for c in picked {
            let mag = rng.gen_range(1..=9) as f64;
            let v = if rng.gen_bool(0.5) { mag } else { -mag };
            m.row_idx.push(r as i64);
            m.col_idx.push(c as i64);
            m.values.push(v);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm(s: &str) -> Result<CooMatrix, ParseError> {
        parse_matrix_market(s.as_bytes())
    }

    #[test]
    fn single_entry() {
        let m = mm("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 3.5\n").unwrap();
        assert_eq!((m.rows, m.cols, m.nnz()), (2, 2, 1));
        assert_eq!(m.triplets().next(), Some((0, 0, 3.5)));
    }

    #[test]
    fn symmetric_expansion() {
        let m = mm("%%MatrixMarket matrix coordinate integer symmetric\n% c\n2 2 2\n2 1 4\n1 1 2\n").unwrap();
        let t: Vec<_> = m.triplets().collect();
        assert_eq!(t, vec![(0, 0, 2.0), (0, 1, 4.0), (1, 0, 4.0)]);
    }

    #[test]
    fn pattern_and_duplicates() {
        let m = mm("%%MatrixMarket matrix coordinate pattern general\n3 3 3\n2 2\n1 3\n2 2\n").unwrap();
        let t: Vec<_> = m.triplets().collect();
        assert_eq!(t, vec![(0, 2, 1.0), (1, 1, 2.0)]);
    }

    #[test]
    fn out_of_bounds_reports_line() {
        let e = mm("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n3 1 1.0\n").unwrap_err();
        assert_eq!(e.line, 4);
        assert!(matches!(e.kind, ParseErrorKind::OutOfBounds { row: 3, col: 1, .. }));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            mm("%%MatrixMarket matrix array real general\n2 2\n").unwrap_err().kind,
            ParseErrorKind::NotCoordinate(_)
        ));
        assert!(matches!(
            mm("hello\n").unwrap_err().kind,
            ParseErrorKind::MalformedHeader(_)
        ));
        for sym in ["hermitian", "skew-symmetric"] {
            let e = mm(&format!("%%MatrixMarket matrix coordinate real {sym}\n1 1 0\n")).unwrap_err();
            assert!(matches!(e.kind, ParseErrorKind::Unsupported(_)));
        }
        assert!(matches!(
            mm("%%MatrixMarket matrix coordinate complex general\n1 1 0\n").unwrap_err().kind,
            ParseErrorKind::Unsupported(_)
        ));
    }

    #[test]
    fn truncated_and_overlong() {
        let e = mm("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Truncated { expected: 3, found: 1 });
        assert_eq!(e.line, 4);
        let e = mm("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1\n2 2 1\n").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::TooManyEntries(1));
        let e = mm("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::BadEntry(_)));
    }

    #[test]
    fn edge_list_basic() {
        let e = parse_edge_list("# c\n0 1\n0 2".as_bytes(), 3).unwrap();
        assert_eq!(e.n_edges(), 2);
        assert_eq!(e.out_degree, vec![2, 0, 0]);
    }

    #[test]
    fn edge_list_errors() {
        let e = parse_edge_list("5 0".as_bytes(), 3).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::VertexOutOfRange { id: 5, n: 3 });
        let e = parse_edge_list("0 a".as_bytes(), 3).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::BadToken("a".into()));
        assert_eq!(parse_edge_list("".as_bytes(), 3).unwrap().n_edges(), 0);
    }

    #[test]
    fn edge_list_inferred_count() {
        let e = parse_edge_list_inferred("0 4\n2 1\n".as_bytes()).unwrap();
        assert_eq!(e.n_vertices, 5);
        assert_eq!(e.out_degree, vec![1, 0, 1, 0, 0]);
    }

    #[test]
    fn dense_generator() {
        assert_eq!(gen_dense(1, 1).nnz(), 1);
        let m = gen_dense(3, 2);
        assert_eq!(m.row_idx, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(m.col_idx, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn dense_chunks_are_contiguous() {
        let m = gen_dense(5, 16);
        for chunk in 0..m.nnz() / 8 {
            let r = &m.row_idx[chunk * 8..chunk * 8 + 8];
            let c = &m.col_idx[chunk * 8..chunk * 8 + 8];
            assert!(r.iter().all(|&x| x == r[0]));
            assert!(c.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn random_generator() {
        let a = gen_random(64, 64, 8, 1);
        assert_eq!(a.nnz(), 512);
        assert_eq!(a, gen_random(64, 64, 8, 1));
        assert_ne!(a, gen_random(64, 64, 8, 2));
        let full = gen_random(4, 6, 6, 3);
        let dense = gen_dense(4, 6);
        assert_eq!(full.row_idx, dense.row_idx);
        assert_eq!(full.col_idx, dense.col_idx);
        assert!(a.values.iter().all(|&v| v != 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn canonicalization_sorts_and_sums() {
        let m = CooMatrix::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0)]);
        assert_eq!(m.triplets().collect::<Vec<_>>(), vec![(0, 1, 2.0), (1, 0, 4.0)]);
    }
}
