//! Edge coverage under partial instrumentation.
//!
//! Models trace-pc-guard style feedback: every instrumented edge owns a guard
//! id that indexes a shared map of 8-bit hit counters. Functions on the block
//! list get no guards, so their edges never produce feedback.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::callgraph::FunctionId;
use crate::pathfinder::BlockList;

pub const DEFAULT_MAP_SIZE: usize = 1 << 16;
pub const MIN_MAP_SIZE: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoverageError {
    #[error("map size {0} is not a power of two >= {MIN_MAP_SIZE}")]
    BadMapSize(usize),
    #[error("function index {0} is not in the guard table")]
    UnknownFunction(u32),
    #[error("edge {edge} of {function} out of range (function has {count} edges)")]
    EdgeOutOfRange {
        function: String,
        edge: u32,
        count: u32,
    },
    #[error("duplicate function {0} in function table")]
    DuplicateFunction(String),
}

/// Index of a function in a [`FunctionTable`], in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FnIdx(pub u32);

/// Functions of a program together with their number of CFG edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunctionTable {
    entries: Vec<(FunctionId, u32)>,
}

impl FunctionTable {
    pub fn new(entries: Vec<(FunctionId, u32)>) -> Result<Self, CoverageError> {
        let mut seen = BTreeSet::new();
        for (f, _) in &entries {
            if !seen.insert(f) {
                return Err(CoverageError::DuplicateFunction(f.to_string()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn symbol(&self, idx: FnIdx) -> Option<&FunctionId> {
        self.entries.get(idx.0 as usize).map(|(f, _)| f)
    }

    pub fn edge_count(&self, idx: FnIdx) -> Option<u32> {
        self.entries.get(idx.0 as usize).map(|(_, c)| *c)
    }

    pub fn index_of(&self, symbol: &str) -> Option<FnIdx> {
        self.entries
            .iter()
            .position(|(f, _)| f.as_str() == symbol)
            .map(|i| FnIdx(i as u32))
    }

    pub fn iter(&self) -> impl Iterator<Item = (FnIdx, &FunctionId, u32)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (f, c))| (FnIdx(i as u32), f, *c))
    }
}

impl From<&BTreeMap<FunctionId, u32>> for FunctionTable {
    fn from(map: &BTreeMap<FunctionId, u32>) -> Self {
        Self {
            entries: map.iter().map(|(f, c)| (f.clone(), *c)).collect(),
        }
    }
}

/// One executed CFG edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub function: FnIdx,
    pub edge: u32,
}

/// What a single execution did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub events: Vec<Event>,
    /// Indices into the target's oracle list.
    pub oracle_hits: BTreeSet<usize>,
    pub crashed: bool,
}

impl ExecutionTrace {
    pub fn clear(&mut self) {
        self.events.clear();
        self.oracle_hits.clear();
        self.crashed = false;
    }

    /// Hash of the ordered event list, used to deduplicate crashes.
    pub fn signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.events.hash(&mut h);
        h.finish()
    }
}

/// Assignment of guard ids to the edges of instrumented functions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardTable {
    map_size: usize,
    symbols: Vec<FunctionId>,
    edge_counts: Vec<u32>,
    /// First guard id of each function, `None` when the function is blocked.
    base: Vec<Option<u32>>,
    blocked: BTreeSet<FunctionId>,
    guarded_edges: usize,
}

fn check_map_size(map_size: usize) -> Result<(), CoverageError> {
    if map_size < MIN_MAP_SIZE || !map_size.is_power_of_two() || map_size > u32::MAX as usize {
        return Err(CoverageError::BadMapSize(map_size));
    }
    Ok(())
}

impl GuardTable {
    /// Instruments every edge of every function.
    pub fn unfiltered(table: &FunctionTable, map_size: usize) -> Result<Self, CoverageError> {
        check_map_size(map_size)?;
        let mut order: Vec<usize> = (0..table.len()).collect();
        order.sort_by(|&a, &b| table.entries[a].0.cmp(&table.entries[b].0));

        let mut base = vec![None; table.len()];
        let mut next: u64 = 0;
        for i in order {
            base[i] = Some((next % map_size as u64) as u32);
            next += u64::from(table.entries[i].1);
        }
        Ok(Self::finish(table, map_size, base, BTreeSet::new(), next))
    }

    /// Instruments every edge of every function not on `blocklist`.
    ///
    /// Ids are dense from 0 in symbol order, so removing functions shifts the
    /// ids of the ones that remain.
    pub fn allocate(
        table: &FunctionTable,
        blocklist: &BlockList,
        map_size: usize,
    ) -> Result<Self, CoverageError> {
        check_map_size(map_size)?;
        let mut order: Vec<usize> = (0..table.len()).collect();
        order.sort_by(|&a, &b| table.entries[a].0.cmp(&table.entries[b].0));

        let mut base = vec![None; table.len()];
        let mut blocked = BTreeSet::new();
        let mut next: u64 = 0;
        for i in order {
            let (f, count) = &table.entries[i];
            if blocklist.is_blocked(f.as_str()) {
                blocked.insert(f.clone());
                continue;
            }
            base[i] = Some((next % map_size as u64) as u32);
            next += u64::from(*count);
        }
        Ok(Self::finish(table, map_size, base, blocked, next))
    }

    fn finish(
        table: &FunctionTable,
        map_size: usize,
        base: Vec<Option<u32>>,
        blocked: BTreeSet<FunctionId>,
        guarded: u64,
    ) -> Self {
        if guarded > map_size as u64 {
            log::warn!("{guarded} instrumented edges exceed map size {map_size}; guard ids collide");
        }
        Self {
            map_size,
            symbols: table.entries.iter().map(|(f, _)| f.clone()).collect(),
            edge_counts: table.entries.iter().map(|(_, c)| *c).collect(),
            base,
            blocked,
            guarded_edges: guarded as usize,
        }
    }

    pub fn map_size(&self) -> usize {
        self.map_size
    }

    pub fn guarded_edges(&self) -> usize {
        self.guarded_edges
    }

    pub fn blocked(&self) -> &BTreeSet<FunctionId> {
        &self.blocked
    }

    pub fn is_oversubscribed(&self) -> bool {
        self.guarded_edges > self.map_size
    }

    /// Guard of an edge; `Ok(None)` for edges of blocked functions.
    #[inline]
    pub fn guard(&self, function: FnIdx, edge: u32) -> Result<Option<u32>, CoverageError> {
        let i = function.0 as usize;
        let count = *self
            .edge_counts
            .get(i)
            .ok_or(CoverageError::UnknownFunction(function.0))?;
        match self.base[i] {
            None => Ok(None),
            Some(_) if edge >= count => Err(CoverageError::EdgeOutOfRange {
                function: self.symbols[i].to_string(),
                edge,
                count,
            }),
            Some(b) => Ok(Some(((u64::from(b) + u64::from(edge)) % self.map_size as u64) as u32)),
        }
    }

    pub fn guard_for_symbol(&self, symbol: &str, edge: u32) -> Option<u32> {
        let i = self.symbols.iter().position(|f| f.as_str() == symbol)?;
        self.guard(FnIdx(i as u32), edge).ok().flatten()
    }

    /// Every `(symbol, edge) -> guard` pair, in symbol order.
    pub fn assignment(&self) -> BTreeMap<(FunctionId, u32), u32> {
        let mut out = BTreeMap::new();
        for (i, f) in self.symbols.iter().enumerate() {
            if let Some(b) = self.base[i] {
                for e in 0..self.edge_counts[i] {
                    let id = ((u64::from(b) + u64::from(e)) % self.map_size as u64) as u32;
                    out.insert((f.clone(), e), id);
                }
            }
        }
        out
    }
}

/// Hit counters, one per guard id, saturating at 255.
#[derive(Clone, PartialEq, Eq)]
pub struct CoverageMap {
    hits: Vec<u8>,
}

impl std::fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoverageMap")
            .field("size", &self.hits.len())
            .field("nonzero", &self.nonzero().count())
            .finish()
    }
}

impl CoverageMap {
    pub fn new(map_size: usize) -> Self {
        Self {
            hits: vec![0; map_size],
        }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn reset(&mut self) {
        self.hits.fill(0);
    }

    pub fn get(&self, guard: u32) -> u8 {
        self.hits[guard as usize]
    }

    #[inline]
    pub fn hit(&mut self, guard: u32) {
        let c = &mut self.hits[guard as usize];
        *c = c.saturating_add(1);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.hits
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (u32, u8)> + '_ {
        self.hits
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0)
            .map(|(i, c)| (i as u32, *c))
    }

    /// Hex dump of all 16-byte rows that contain a nonzero counter.
    pub fn hex_dump(&self) -> String {
        let mut out = String::new();
        for (row, chunk) in self.hits.chunks(16).enumerate() {
            if chunk.iter().all(|c| *c == 0) {
                continue;
            }
            let _ = write!(out, "{:08x}:", row * 16);
            for c in chunk {
                let _ = write!(out, " {c:02x}");
            }
            out.push('\n');
        }
        out
    }
}

/// Adds every guarded event of `trace` to `map`.
pub fn apply_trace(
    map: &mut CoverageMap,
    gt: &GuardTable,
    trace: &ExecutionTrace,
) -> Result<(), CoverageError> {
    for ev in &trace.events {
        if let Some(g) = gt.guard(ev.function, ev.edge)? {
            map.hit(g);
        }
    }
    Ok(())
}

/// Like [`apply_trace`], and records each guard whose counter left zero.
/// Lets the fuzzer check and reset only what a run touched.
pub fn apply_trace_tracked(
    map: &mut CoverageMap,
    gt: &GuardTable,
    trace: &ExecutionTrace,
    touched: &mut Vec<u32>,
) -> Result<(), CoverageError> {
    for ev in &trace.events {
        if let Some(g) = gt.guard(ev.function, ev.edge)? {
            if map.hits[g as usize] == 0 {
                touched.push(g);
            }
            map.hit(g);
        }
    }
    Ok(())
}

pub const BUCKET_COUNT: usize = 9;

const BUCKET_LABELS: [&str; BUCKET_COUNT] =
    ["0", "1", "2", "3", "4-7", "8-15", "16-31", "32-127", "128-255"];

/// Maps a hit count to its bucket index 0..=8:
/// `{0} {1} {2} {3} {4-7} {8-15} {16-31} {32-127} {128-255}`.
#[inline]
pub fn bucketize(count: u8) -> u8 {
    match count {
        0..=3 => count,
        4..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        32..=127 => 7,
        128..=255 => 8,
    }
}

pub fn bucket_label(bucket: u8) -> &'static str {
    BUCKET_LABELS[bucket as usize]
}

/// Outcome of comparing one run against the accumulated buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Novelty {
    pub novel: bool,
    /// Number of guards whose bucket set grew.
    pub grown_guards: usize,
}

/// Per-guard set of buckets observed so far.
///
/// Bucket 0 means "not executed" and is never recorded. Each guard keeps a
/// bitmask with bit `b - 1` set once bucket `b` has been seen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketSummary {
    seen: Vec<u8>,
}

impl BucketSummary {
    pub fn new(map_size: usize) -> Self {
        Self {
            seen: vec![0; map_size],
        }
    }

    pub fn buckets(&self, guard: u32) -> Vec<u8> {
        let mask = self.seen[guard as usize];
        (1..BUCKET_COUNT as u8)
            .filter(|b| mask & (1 << (b - 1)) != 0)
            .collect()
    }

    /// Number of guards with at least one recorded bucket.
    pub fn covered_guards(&self) -> usize {
        self.seen.iter().filter(|m| **m != 0).count()
    }

    #[inline]
    fn observe(&mut self, guard: usize, count: u8) -> bool {
        if count == 0 {
            return false;
        }
        let bit = 1u8 << (bucketize(count) - 1);
        let slot = &mut self.seen[guard];
        if *slot & bit == 0 {
            *slot |= bit;
            true
        } else {
            false
        }
    }

    /// Scans the whole run map, records its buckets and reports whether any
    /// guard showed a bucket it had not shown before.
    pub fn novelty_check(&mut self, run_map: &CoverageMap) -> Novelty {
        let mut grown = 0;
        for (i, &c) in run_map.hits.iter().enumerate() {
            if self.observe(i, c) {
                grown += 1;
            }
        }
        Novelty {
            novel: grown > 0,
            grown_guards: grown,
        }
    }

    /// Same as [`novelty_check`](Self::novelty_check) restricted to the
    /// guards in `touched`, which must list every nonzero counter of
    /// `run_map`.
    pub fn novelty_check_touched(&mut self, run_map: &CoverageMap, touched: &[u32]) -> Novelty {
        let mut grown = 0;
        for &g in touched {
            if self.observe(g as usize, run_map.hits[g as usize]) {
                grown += 1;
            }
        }
        Novelty {
            novel: grown > 0,
            grown_guards: grown,
        }
    }
}

/// Zeroes exactly the listed counters.
pub fn reset_touched(map: &mut CoverageMap, touched: &mut Vec<u32>) {
    for &g in touched.iter() {
        map.hits[g as usize] = 0;
    }
    touched.clear();
}
