//! Information producer: splits the iteration space into W-lane groups,
//! extracts per-group gather and reduction features from the immutable
//! access arrays, deduplicates them into pattern classes and marks runs of
//! groups that all reduce into one address.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::data::{fnv1a64, ArithError, Bindings, ReduceOp, Scalar};
use crate::lanes::{LaneMask, LanePerm, MAX_LANES};
use crate::seed::{check_bindings, validate_seed, CodeSeed, Combine, ExecError, SiteKind, Violation};
use crate::vvm::LaneVector;

/// Lane vector of per-lane offsets.
pub type LaneOffsets = SmallVec<[i64; 8]>;

/// SIMD width in lanes: a power of two in `2..=16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct VectorShape {
    width: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("width must be a power of two in 2..16, got {0}")]
pub struct ShapeError(pub usize);

impl VectorShape {
    pub fn new(width: usize) -> Result<Self, ShapeError> {
        if width.is_power_of_two() && (2..=MAX_LANES).contains(&width) {
            Ok(VectorShape { width: width as u8 })
        } else {
            Err(ShapeError(width))
        }
    }

    pub fn width(self) -> usize {
        self.width as usize
    }

    pub fn log2(self) -> usize {
        self.width.trailing_zeros() as usize
    }
}

impl TryFrom<usize> for VectorShape {
    type Error = ShapeError;

    fn try_from(w: usize) -> Result<Self, ShapeError> {
        VectorShape::new(w)
    }
}

impl From<VectorShape> for usize {
    fn from(s: VectorShape) -> usize {
        s.width()
    }
}

/// Iterations `start .. start + active` mapped onto lanes `0 .. active`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub group: usize,
    pub start: usize,
    pub tail_mask: LaneMask,
}

impl Chunk {
    pub fn active(&self) -> usize {
        self.tail_mask.count()
    }

    pub fn iteration(&self, lane: usize) -> Option<usize> {
        self.tail_mask.get(lane).then_some(self.start + lane)
    }
}

pub fn chunk_iterations(trip_count: usize, shape: VectorShape) -> impl Iterator<Item = Chunk> {
    let w = shape.width();
    (0..trip_count.div_ceil(w)).map(move |g| {
        let start = g * w;
        Chunk {
            group: g,
            start,
            tail_mask: LaneMask::prefix(w, (trip_count - start).min(w)),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lane {lane}: offset {index} out of range (len {len})")]
pub struct GatherError {
    pub lane: usize,
    pub index: i64,
    pub len: usize,
}

/// Cover of one group's load offsets by `flag` contiguous W-wide windows.
///
/// Lane `l` reads `bases[j] + perm[l]` where `j` is the window the masks
/// select for it: window 0 when no mask is set, window `k` when
/// `masks[k - 1]` is set. `flag == width + 1` marks a group that cannot be
/// covered because the array is shorter than one window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatherFeature {
    pub flag: usize,
    pub bases: LaneOffsets,
    pub perm: LanePerm,
    pub masks: SmallVec<[LaneMask; 4]>,
}

impl GatherFeature {
    pub fn irreplaceable(shape: VectorShape) -> Self {
        GatherFeature {
            flag: shape.width() + 1,
            bases: SmallVec::new(),
            perm: LanePerm::identity(shape.width()),
            masks: SmallVec::new(),
        }
    }

    pub fn is_replaceable(&self) -> bool {
        self.flag <= self.perm.width()
    }

    /// Window index per lane, decoded from the masks.
    pub fn window_of(&self, lane: usize) -> usize {
        self.masks
            .iter()
            .rposition(|m| m.get(lane))
            .map_or(0, |k| k + 1)
    }

    /// The offsets each lane reads, rebuilt from bases, perm and masks.
    pub fn reconstruct(&self) -> Vec<i64> {
        (0..self.perm.width())
            .map(|l| self.bases[self.window_of(l)] + self.perm.get(l) as i64)
            .collect()
    }

    fn shape(&self) -> GatherShape {
        GatherShape {
            flag: self.flag,
            perm: self.perm,
            masks: self.masks.to_vec(),
        }
    }
}

/// Replaces inactive lanes by the first active lane's offset.
fn substitute(indices: &[i64], tail: LaneMask) -> LaneOffsets {
    let first = tail.lanes().next().map_or(0, |l| indices[l]);
    (0..indices.len())
        .map(|l| if tail.get(l) { indices[l] } else { first })
        .collect()
}

/// Greedy fixed-length window cover of the active offsets: a window is
/// opened at the smallest uncovered offset, with its base clamped to
/// `array_len - W` so no load runs past the array.
pub fn gather_feature(
    indices: &[i64],
    tail: LaneMask,
    array_len: usize,
    shape: VectorShape,
) -> Result<GatherFeature, GatherError> {
    let w = shape.width();
    assert_eq!(indices.len(), w, "one offset per lane");
    for l in tail.lanes() {
        let index = indices[l];
        if index < 0 || index as usize >= array_len {
            return Err(GatherError {
                lane: l,
                index,
                len: array_len,
            });
        }
    }
    if array_len < w || tail.count() == 0 {
        return Ok(GatherFeature::irreplaceable(shape));
    }
    let eff = substitute(indices, tail);
    let mut distinct: SmallVec<[i64; 16]> = eff.iter().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();

    let limit = (array_len - w) as i64;
    let wi = w as i64;
    let covers = |b: i64, x: i64| b <= x && x < b + wi;
    let mut bases = LaneOffsets::new();
    for &d in &distinct {
        if !bases.iter().any(|&b| covers(b, d)) {
            bases.push(d.min(limit));
        }
    }

    let mut perm = LanePerm::identity(w);
    let mut masks: SmallVec<[LaneMask; 4]> = (1..bases.len()).map(|_| LaneMask::none(w)).collect();
    for (l, &x) in eff.iter().enumerate() {
        let j = bases.iter().position(|&b| covers(b, x)).expect("covered");
        perm.set(l, (x - bases[j]) as usize);
        if j > 0 {
            masks[j - 1].set(l, true);
        }
    }
    Ok(GatherFeature {
        flag: bases.len(),
        bases,
        perm,
        masks,
    })
}

/// One shuffle-combine step: `out[l] = mask[l] ? op(in[l], in[perm[l]]) : in[l]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReductionStep {
    pub perm: LanePerm,
    pub mask: LaneMask,
}

/// Conflict-resolution schedule for one group's write addresses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReductionFeature {
    /// Number of steps, `ceil(log2(max address multiplicity))`.
    pub flag: usize,
    pub steps: SmallVec<[ReductionStep; 4]>,
    /// One lane per distinct address; holds that address's fold after the steps.
    pub reps: LaneMask,
    /// Every active lane writes one address and the whole group is active.
    pub use_hreduce: bool,
}

impl ReductionFeature {
    /// Runs the steps over a value vector.
    pub fn apply(&self, values: &[Scalar], op: ReduceOp) -> Result<Vec<Scalar>, ArithError> {
        let mut v = LaneVector::from_scalars(values);
        for s in &self.steps {
            v = v.reduce_step(s.perm, s.mask, op)?;
        }
        Ok(v.to_vec())
    }
}

/// Partitions active lanes by address and pairs lane `k` with lane
/// `k + ceil(s/2)` inside each partition until one lane per address remains.
pub fn reduction_feature(addrs: &[i64], tail: LaneMask, shape: VectorShape) -> ReductionFeature {
    let w = shape.width();
    assert_eq!(addrs.len(), w, "one address per lane");
    let mut groups: SmallVec<[(i64, SmallVec<[usize; 16]>); 16]> = SmallVec::new();
    for l in tail.lanes() {
        match groups.iter_mut().find(|(a, _)| *a == addrs[l]) {
            Some((_, lanes)) => lanes.push(l),
            None => groups.push((addrs[l], SmallVec::from_slice(&[l]))),
        }
    }
    let mut steps = SmallVec::new();
    while groups.iter().any(|(_, g)| g.len() > 1) {
        let mut perm = LanePerm::identity(w);
        let mut mask = LaneMask::none(w);
        for (_, g) in groups.iter_mut() {
            let s = g.len();
            let h = s.div_ceil(2);
            for k in 0..s - h {
                perm.set(g[k], g[k + h]);
                mask.set(g[k], true);
            }
            g.truncate(h);
        }
        steps.push(ReductionStep { perm, mask });
    }
    let mut reps = LaneMask::none(w);
    for (_, g) in &groups {
        reps.set(g[0], true);
    }
    ReductionFeature {
        flag: steps.len(),
        steps,
        reps,
        use_hreduce: groups.len() == 1 && tail.is_full(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteFeature {
    pub kind: SiteKind,
    /// Offset each lane reads (inactive lanes substituted).
    pub indices: LaneOffsets,
    pub gather: GatherFeature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteFeature {
    /// Address each lane writes (inactive lanes substituted).
    pub addrs: LaneOffsets,
    /// Window cover of the write addresses (the scatter view).
    pub window: GatherFeature,
    /// Distinct addresses among active lanes.
    pub distinct: usize,
    /// Present when the store combines with a reduction operator.
    pub reduction: Option<ReductionFeature>,
}

/// Position of a group inside a same-address run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpan {
    pub head: usize,
    pub len: usize,
}

impl RunSpan {
    pub fn is_head(&self, group: usize) -> bool {
        group == self.head
    }

    pub fn is_last(&self, group: usize) -> bool {
        group + 1 == self.head + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub group: usize,
    pub start: usize,
    pub tail_mask: LaneMask,
    /// One entry per load site, in [`CodeSeed::value_sites`] order.
    pub sites: SmallVec<[SiteFeature; 2]>,
    pub write: WriteFeature,
    pub run: Option<RunSpan>,
}

impl FeatureColumn {
    /// The operand-free part of the column; equal shapes share one program.
    pub fn shape(&self) -> ColumnShape {
        ColumnShape {
            width: self.tail_mask.width(),
            tail_mask: self.tail_mask,
            sites: self.sites.iter().map(|s| s.gather.shape()).collect(),
            write_window: self.write.window.shape(),
            distinct_writes: self.write.distinct,
            reduction: self.write.reduction.clone(),
        }
    }

    /// All active lanes write one address.
    pub fn single_address(&self) -> bool {
        self.write.reduction.is_some() && self.write.distinct == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GatherShape {
    pub flag: usize,
    pub perm: LanePerm,
    pub masks: Vec<LaneMask>,
}

impl GatherShape {
    pub fn is_replaceable(&self) -> bool {
        self.flag <= self.perm.width()
    }
}

/// Canonical, operand-free form of a feature column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnShape {
    pub width: usize,
    pub tail_mask: LaneMask,
    pub sites: Vec<GatherShape>,
    pub write_window: GatherShape,
    pub distinct_writes: usize,
    pub reduction: Option<ReductionFeature>,
}

impl ColumnShape {
    /// Deterministic byte layout hashed for deduplication.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        fn gather(out: &mut Vec<u8>, g: &GatherShape) {
            out.push(g.flag as u8);
            out.extend_from_slice(g.perm.as_slice());
            out.push(g.masks.len() as u8);
            for m in &g.masks {
                out.extend_from_slice(&m.bits().to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(64);
        out.push(self.width as u8);
        out.extend_from_slice(&self.tail_mask.bits().to_le_bytes());
        out.push(self.sites.len() as u8);
        for s in &self.sites {
            gather(&mut out, s);
        }
        gather(&mut out, &self.write_window);
        out.push(self.distinct_writes as u8);
        match &self.reduction {
            None => out.push(0),
            Some(r) => {
                out.push(1);
                out.push(r.flag as u8);
                for s in &r.steps {
                    out.extend_from_slice(s.perm.as_slice());
                    out.extend_from_slice(&s.mask.bits().to_le_bytes());
                }
                out.extend_from_slice(&r.reps.bits().to_le_bytes());
                out.push(r.use_hreduce as u8);
            }
        }
        out
    }

    pub fn hash64(&self) -> u64 {
        fnv1a64(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("seed is invalid: {0:?}")]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Bindings(ExecError),
    #[error("group {group}: {source}")]
    Eval {
        group: usize,
        #[source]
        source: ExecError,
    },
    #[error("group {group}: `{array}` {source}")]
    OutOfRange {
        group: usize,
        array: String,
        #[source]
        source: GatherError,
    },
}

/// Evaluates every index subexpression per lane and builds one column per group.
pub fn build_feature_table(
    seed: &CodeSeed,
    bindings: &Bindings,
    shape: VectorShape,
) -> Result<Vec<FeatureColumn>, FeatureError> {
    validate_seed(seed).map_err(FeatureError::Invalid)?;
    check_bindings(seed, bindings).map_err(FeatureError::Bindings)?;
    let w = shape.width();
    let sites: Vec<_> = seed
        .value_sites()
        .into_iter()
        .map(|s| {
            let index = match seed.node(s.node) {
                Some(crate::seed::SeedExpr::LoadIndirect { index, .. }) => Some(*index),
                _ => None,
            };
            let len = bindings[&s.array].len();
            (s, index, len)
        })
        .collect();
    let target = &seed.store.target;
    let target_len = bindings[target].len();

    let mut table = Vec::with_capacity(seed.trip_count.div_ceil(w));
    let mut raw = vec![0i64; w];
    for chunk in chunk_iterations(seed.trip_count, shape) {
        let g = chunk.group;
        let mut site_features = SmallVec::new();
        for (site, index, len) in &sites {
            for (l, slot) in raw.iter_mut().enumerate() {
                *slot = match (chunk.iteration(l), index) {
                    (None, _) => 0,
                    (Some(i), None) => i as i64,
                    (Some(i), Some(e)) => seed
                        .eval_index(*e, i, bindings)
                        .map_err(|source| FeatureError::Eval { group: g, source })?,
                };
            }
            let gather = gather_feature(&raw, chunk.tail_mask, *len, shape).map_err(|source| {
                FeatureError::OutOfRange {
                    group: g,
                    array: site.array.clone(),
                    source,
                }
            })?;
            site_features.push(SiteFeature {
                kind: site.kind,
                indices: substitute(&raw, chunk.tail_mask),
                gather,
            });
        }
        for (l, slot) in raw.iter_mut().enumerate() {
            *slot = match chunk.iteration(l) {
                None => 0,
                Some(i) => seed
                    .eval_index(seed.store.index, i, bindings)
                    .map_err(|source| FeatureError::Eval { group: g, source })?,
            };
        }
        let window = gather_feature(&raw, chunk.tail_mask, target_len, shape).map_err(|source| {
            FeatureError::OutOfRange {
                group: g,
                array: target.clone(),
                source,
            }
        })?;
        let addrs = substitute(&raw, chunk.tail_mask);
        let mut seen: SmallVec<[i64; 16]> = chunk.tail_mask.lanes().map(|l| addrs[l]).collect();
        seen.sort_unstable();
        seen.dedup();
        let reduction = match seed.store.combine {
            Combine::Overwrite => None,
            Combine::Reduce(_) => Some(reduction_feature(&addrs, chunk.tail_mask, shape)),
        };
        table.push(FeatureColumn {
            group: g,
            start: chunk.start,
            tail_mask: chunk.tail_mask,
            sites: site_features,
            write: WriteFeature {
                addrs,
                window,
                distinct: seen.len(),
                reduction,
            },
            run: None,
        });
    }
    Ok(table)
}

/// A set of groups sharing one canonical shape and therefore one program.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternClass {
    pub id: usize,
    pub hash: u64,
    pub shape: ColumnShape,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dedup {
    pub classes: Vec<PatternClass>,
    /// Class id per group.
    pub class_of: Vec<usize>,
}

pub fn dedup_patterns(table: &[FeatureColumn]) -> Dedup {
    dedup_patterns_with(table, fnv1a64)
}

/// Deduplication with an explicit digest. Equal digests are always
/// re-compared structurally, so a poor digest only costs time.
pub fn dedup_patterns_with(table: &[FeatureColumn], digest: impl Fn(&[u8]) -> u64) -> Dedup {
    let mut classes: Vec<PatternClass> = Vec::new();
    let mut by_hash: HashMap<u64, SmallVec<[usize; 1]>> = HashMap::new();
    let mut class_of = Vec::with_capacity(table.len());
    for col in table {
        let shape = col.shape();
        let hash = digest(&shape.canonical_bytes());
        let bucket = by_hash.entry(hash).or_default();
        let id = match bucket.iter().copied().find(|&c| classes[c].shape == shape) {
            Some(c) => c,
            None => {
                let id = classes.len();
                classes.push(PatternClass {
                    id,
                    hash,
                    shape,
                    members: Vec::new(),
                });
                bucket.push(id);
                id
            }
        };
        classes[id].members.push(col.group);
        class_of.push(id);
    }
    Dedup { classes, class_of }
}

/// A maximal run of consecutive groups whose active lanes all reduce into `addr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub head: usize,
    pub len: usize,
    pub addr: i64,
}

/// Annotates every single-address group with its run and returns the runs.
pub fn merge_same_address_runs(table: &mut [FeatureColumn]) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut g = 0;
    while g < table.len() {
        if !table[g].single_address() {
            g += 1;
            continue;
        }
        let addr = table[g].write.addrs[0];
        let mut end = g + 1;
        while end < table.len() && table[end].single_address() && table[end].write.addrs[0] == addr {
            end += 1;
        }
        let span = RunSpan {
            head: table[g].group,
            len: end - g,
        };
        for col in &mut table[g..end] {
            col.run = Some(span);
        }
        runs.push(Run {
            head: span.head,
            len: span.len,
            addr,
        });
        g = end;
    }
    runs
}
