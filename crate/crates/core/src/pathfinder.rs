//! Block-list computation.
//!
//! A function is blocked when no call path leads from it to a function in
//! the unsafe manifest. Blocked functions receive no coverage guards, so the
//! fuzzer stops rewarding inputs for exploring code that can never execute
//! unsafe operations.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::callgraph::{CallGraph, FunctionId};
use crate::unsafescan::UnsafeManifest;

/// How unresolved indirect call sites are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMode {
    /// Only explicit edges count.
    #[default]
    Standard,
    /// Functions with unresolved indirect calls are assumed to reach unsafe
    /// code, and so is everything that calls them.
    ConservativeIndirect,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockList {
    blocked: BTreeSet<FunctionId>,
    mode: BlockMode,
}

impl BlockList {
    /// A block list that blocks nothing.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a block list from explicit symbols, e.g. one read from disk.
    pub fn from_symbols<I: IntoIterator<Item = FunctionId>>(symbols: I, mode: BlockMode) -> Self {
        Self {
            blocked: symbols.into_iter().collect(),
            mode,
        }
    }

    pub fn blocked(&self) -> &BTreeSet<FunctionId> {
        &self.blocked
    }

    pub fn mode(&self) -> BlockMode {
        self.mode
    }

    pub fn is_blocked(&self, symbol: &str) -> bool {
        self.blocked.contains(symbol)
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }
}

/// Output format for [`write_blocklist`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockListFormat {
    /// One symbol per line.
    Plain,
    /// `fun: <symbol>` lines, as understood by AFL++'s denylist.
    AflDenylist,
}

/// Diagnostic counts for one block-list computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathfindSummary {
    pub total_nodes: usize,
    pub unsafe_nodes: usize,
    pub blocked_nodes: usize,
    pub blocked_fraction: f64,
    /// Manifest symbols that do not appear in the graph.
    pub missing_unsafe: Vec<String>,
}

impl fmt::Display for PathfindSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24}{:>10}", "Functions", self.total_nodes)?;
        writeln!(f, "{:<24}{:>10}", "Unsafe functions", self.unsafe_nodes)?;
        writeln!(
            f,
            "{:<24}{:>10} ({:.2}%)",
            "Excluded functions",
            self.blocked_nodes,
            self.blocked_fraction * 100.0
        )?;
        if !self.missing_unsafe.is_empty() {
            writeln!(
                f,
                "{:<24}{:>10}",
                "Unsafe, not in graph",
                self.missing_unsafe.len()
            )?;
        }
        Ok(())
    }
}

/// Computes the set of graph nodes that cannot reach any unsafe function.
///
/// Breadth-first search over reversed edges, seeded with the unsafe nodes
/// (plus indirect sites in [`BlockMode::ConservativeIndirect`]). Everything
/// not reached is blocked.
pub fn compute_blocklist(g: &CallGraph, m: &UnsafeManifest, mode: BlockMode) -> BlockList {
    compute_with_summary(g, m, mode).0
}

pub fn compute_with_summary(
    g: &CallGraph,
    m: &UnsafeManifest,
    mode: BlockMode,
) -> (BlockList, PathfindSummary) {
    let nodes: Vec<&FunctionId> = g.nodes().iter().collect();
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();

    // Reverse adjacency: callee -> callers.
    let mut callers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (caller, callee) in g.edges() {
        callers[index[callee.as_str()]].push(index[caller.as_str()]);
    }

    let mut reached = vec![false; nodes.len()];
    let mut queue = VecDeque::new();
    let mut missing_unsafe = Vec::new();
    let mut unsafe_nodes = 0;

    for f in m.functions() {
        match index.get(f.as_str()) {
            Some(&i) => {
                unsafe_nodes += 1;
                if !reached[i] {
                    reached[i] = true;
                    queue.push_back(i);
                }
            }
            None => missing_unsafe.push(f.to_string()),
        }
    }
    if mode == BlockMode::ConservativeIndirect {
        for f in g.indirect_sites() {
            let i = index[f.as_str()];
            if !reached[i] {
                reached[i] = true;
                queue.push_back(i);
            }
        }
    }

    while let Some(v) = queue.pop_front() {
        for &u in &callers[v] {
            if !reached[u] {
                reached[u] = true;
                queue.push_back(u);
            }
        }
    }

    let blocked: BTreeSet<FunctionId> = nodes
        .iter()
        .zip(&reached)
        .filter(|(_, r)| !**r)
        .map(|(f, _)| (*f).clone())
        .collect();

    for sym in &missing_unsafe {
        log::warn!("unsafe function {sym} is not in the call graph");
    }

    let bl = BlockList { blocked, mode };
    let summary = PathfindSummary {
        total_nodes: nodes.len(),
        unsafe_nodes,
        blocked_nodes: bl.len(),
        blocked_fraction: coverage_fraction(g, &bl),
        missing_unsafe,
    };
    (bl, summary)
}

/// Fraction of graph nodes that are blocked; 0 for an empty graph.
pub fn coverage_fraction(g: &CallGraph, b: &BlockList) -> f64 {
    if g.node_count() == 0 {
        return 0.0;
    }
    let blocked = b.blocked().iter().filter(|f| g.contains(f.as_str())).count();
    blocked as f64 / g.node_count() as f64
}

pub fn write_blocklist(b: &BlockList, format: BlockListFormat) -> String {
    let mut out = String::new();
    for f in b.blocked() {
        if format == BlockListFormat::AflDenylist {
            out.push_str("fun: ");
        }
        out.push_str(f.as_str());
        out.push('\n');
    }
    out
}

/// Reads either block-list format back. Lines starting with `#` are comments.
pub fn parse_blocklist(text: &str) -> Result<BlockList, crate::callgraph::GraphError> {
    let mut blocked = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let sym = line.strip_prefix("fun: ").unwrap_or(line);
        let f = FunctionId::new(sym).map_err(|_| crate::callgraph::GraphError::Parse {
            line: i + 1,
            message: format!("invalid symbol {sym:?}"),
        })?;
        blocked.insert(f);
    }
    Ok(BlockList {
        blocked,
        mode: BlockMode::Standard,
    })
}
