//! In-process fuzz targets.
//!
//! A [`TargetProgram`] bundles a deterministic step function that reports
//! the `(function, edge)` pairs it executes, together with the call graph and
//! unsafe manifest a compiler would have produced for it. Oracles mark unsafe
//! code locations: an execution "hits" an oracle when it runs that location.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::callgraph::{CallGraph, FunctionId};
use crate::coverage::{Event, ExecutionTrace, FnIdx, FunctionTable};
use crate::unsafescan::UnsafeManifest;

pub const DEFAULT_MAX_INPUT_LEN: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarnessError {
    #[error("input of {len} bytes exceeds the maximum of {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("oracle {oracle} is located in {function}, which is not in the unsafe manifest")]
    OracleNotUnsafe { oracle: String, function: String },
    #[error("oracle {oracle} refers to unknown function {function}")]
    OracleUnknownFunction { oracle: String, function: String },
    #[error("invalid target definition: {0}")]
    Definition(String),
}

/// Records what one execution does.
pub struct Tracer<'a> {
    trace: &'a mut ExecutionTrace,
}

impl Tracer<'_> {
    #[inline]
    pub fn edge(&mut self, function: FnIdx, edge: u32) {
        self.trace.events.push(Event { function, edge });
    }

    /// Marks oracle `index` (position in the target's oracle list) as hit.
    #[inline]
    pub fn oracle(&mut self, index: usize) {
        self.trace.oracle_hits.insert(index);
    }

    pub fn crash(&mut self) {
        self.trace.crashed = true;
    }
}

pub type StepFn = dyn Fn(&[u8], &mut Tracer<'_>) + Send + Sync;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Oracle {
    pub id: String,
    pub function: FunctionId,
}

#[derive(Clone)]
pub struct TargetProgram {
    name: String,
    functions: FunctionTable,
    callgraph: CallGraph,
    manifest: UnsafeManifest,
    oracles: Vec<Oracle>,
    max_input_len: usize,
    default_corpus: Vec<Vec<u8>>,
    design_blocked_fraction: Option<f64>,
    step: Arc<StepFn>,
}

impl fmt::Debug for TargetProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetProgram")
            .field("name", &self.name)
            .field("functions", &self.functions.len())
            .field("oracles", &self.oracles)
            .finish_non_exhaustive()
    }
}

/// Builder for [`TargetProgram`]s; function indices follow declaration order.
pub struct TargetBuilder {
    name: String,
    functions: Vec<(String, u32)>,
    calls: Vec<(String, String)>,
    indirect: Vec<String>,
    unsafe_fns: Vec<String>,
    oracles: Vec<(String, String)>,
    max_input_len: usize,
    default_corpus: Vec<Vec<u8>>,
    design_blocked_fraction: Option<f64>,
}

impl TargetBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            functions: Vec::new(),
            calls: Vec::new(),
            indirect: Vec::new(),
            unsafe_fns: Vec::new(),
            oracles: Vec::new(),
            max_input_len: DEFAULT_MAX_INPUT_LEN,
            default_corpus: Vec::new(),
            design_blocked_fraction: None,
        }
    }

    /// Declares a function and returns its index for use in the step
    /// function.
    pub fn function(&mut self, symbol: impl Into<String>, edges: u32) -> FnIdx {
        self.functions.push((symbol.into(), edges));
        FnIdx(self.functions.len() as u32 - 1)
    }

    pub fn call(&mut self, caller: &str, callee: &str) -> &mut Self {
        self.calls.push((caller.to_string(), callee.to_string()));
        self
    }

    pub fn indirect_site(&mut self, caller: &str) -> &mut Self {
        self.indirect.push(caller.to_string());
        self
    }

    pub fn unsafe_fn(&mut self, symbol: &str) -> &mut Self {
        self.unsafe_fns.push(symbol.to_string());
        self
    }

    /// Declares an oracle and returns its index for [`Tracer::oracle`].
    pub fn oracle(&mut self, id: &str, function: &str) -> usize {
        self.oracles.push((id.to_string(), function.to_string()));
        self.oracles.len() - 1
    }

    pub fn max_input_len(&mut self, len: usize) -> &mut Self {
        self.max_input_len = len;
        self
    }

    pub fn seed(&mut self, bytes: &[u8]) -> &mut Self {
        self.default_corpus.push(bytes.to_vec());
        self
    }

    pub fn design_blocked_fraction(&mut self, f: f64) -> &mut Self {
        self.design_blocked_fraction = Some(f);
        self
    }

    pub fn build<F>(self, step: F) -> Result<TargetProgram, HarnessError>
    where
        F: Fn(&[u8], &mut Tracer<'_>) + Send + Sync + 'static,
    {
        let def = |e: String| HarnessError::Definition(e);
        let fid = |s: &str| FunctionId::new(s).map_err(|e| def(e.to_string()));

        let mut entries = Vec::new();
        let mut callgraph = CallGraph::new();
        for (s, c) in &self.functions {
            let f = fid(s)?;
            callgraph.add_node(f.clone());
            entries.push((f, *c));
        }
        let functions = FunctionTable::new(entries).map_err(|e| def(e.to_string()))?;
        for (u, v) in &self.calls {
            if functions.index_of(u).is_none() || functions.index_of(v).is_none() {
                return Err(def(format!("call {u} -> {v} names an undeclared function")));
            }
            callgraph.add_edge(fid(u)?, fid(v)?);
        }
        for u in &self.indirect {
            callgraph.add_indirect_site(fid(u)?);
        }
        let mut manifest = UnsafeManifest::new();
        for u in &self.unsafe_fns {
            manifest.insert(fid(u)?);
        }
        let mut oracles = Vec::new();
        let mut ids = BTreeSet::new();
        for (id, f) in &self.oracles {
            if !ids.insert(id.clone()) {
                return Err(def(format!("duplicate oracle id {id}")));
            }
            if functions.index_of(f).is_none() {
                return Err(HarnessError::OracleUnknownFunction {
                    oracle: id.clone(),
                    function: f.clone(),
                });
            }
            if !manifest.contains(f) {
                return Err(HarnessError::OracleNotUnsafe {
                    oracle: id.clone(),
                    function: f.clone(),
                });
            }
            oracles.push(Oracle {
                id: id.clone(),
                function: fid(f)?,
            });
        }
        if self.default_corpus.iter().any(|s| s.len() > self.max_input_len) {
            return Err(def("default seed longer than the maximum input length".into()));
        }
        Ok(TargetProgram {
            name: self.name,
            functions,
            callgraph,
            manifest,
            oracles,
            max_input_len: self.max_input_len,
            default_corpus: self.default_corpus,
            design_blocked_fraction: self.design_blocked_fraction,
            step: Arc::new(step),
        })
    }
}

impl TargetProgram {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn functions(&self) -> &FunctionTable {
        &self.functions
    }

    pub fn callgraph(&self) -> &CallGraph {
        &self.callgraph
    }

    pub fn manifest(&self) -> &UnsafeManifest {
        &self.manifest
    }

    pub fn oracles(&self) -> &[Oracle] {
        &self.oracles
    }

    pub fn max_input_len(&self) -> usize {
        self.max_input_len
    }

    pub fn default_corpus(&self) -> &[Vec<u8>] {
        &self.default_corpus
    }

    /// Share of functions the target was designed to have blocked.
    pub fn design_blocked_fraction(&self) -> Option<f64> {
        self.design_blocked_fraction
    }

    pub fn execute(&self, input: &[u8]) -> Result<ExecutionTrace, HarnessError> {
        let mut trace = ExecutionTrace::default();
        self.execute_into(input, &mut trace)?;
        Ok(trace)
    }

    /// Runs the target, reusing `trace`'s buffers.
    pub fn execute_into(&self, input: &[u8], trace: &mut ExecutionTrace) -> Result<(), HarnessError> {
        if input.len() > self.max_input_len {
            return Err(HarnessError::InputTooLong {
                len: input.len(),
                max: self.max_input_len,
            });
        }
        trace.clear();
        (self.step)(input, &mut Tracer { trace });
        Ok(())
    }

    /// Symbols of all functions the trace entered.
    pub fn functions_in(&self, trace: &ExecutionTrace) -> BTreeSet<&FunctionId> {
        trace
            .events
            .iter()
            .filter_map(|e| self.functions.symbol(e.function))
            .collect()
    }
}

/// All bundled targets.
pub fn list_targets() -> Vec<TargetProgram> {
    vec![gatekeeper(), honeypot(), multi_oracle()]
}

pub fn target_by_name(name: &str) -> Option<TargetProgram> {
    match name {
        "gatekeeper" => Some(gatekeeper()),
        "honeypot" => Some(honeypot()),
        "multi_oracle" => Some(multi_oracle()),
        _ => None,
    }
}

pub const GATEKEEPER_MAGIC: &[u8; 4] = b"RUST";

/// `RUST` magic followed by a payload of at least two bytes whose last byte
/// equals the sum of the others modulo 256 reaches `write_payload`.
pub fn gatekeeper() -> TargetProgram {
    let mut b = TargetBuilder::new("gatekeeper");
    let main = b.function("main", 6);
    let banner = b.function("banner", 2);
    let usage = b.function("usage", 1);
    let log_reject = b.function("log_reject", 3);
    let validate = b.function("validate_payload", 4);
    let write = b.function("write_payload", 3);
    b.call("main", "banner")
        .call("banner", "usage")
        .call("main", "log_reject")
        .call("main", "validate_payload")
        .call("validate_payload", "log_reject")
        .call("validate_payload", "write_payload")
        .unsafe_fn("write_payload")
        .seed(b"RUSTY")
        .seed(b"hello")
        .seed(b"\x00\x01\x02\x03\x04\x05")
        .design_blocked_fraction(3.0 / 6.0);
    let deep = b.oracle("deep_unsafe", "write_payload");

    b.build(move |input, t| {
        t.edge(main, 0);
        if input.is_empty() {
            t.edge(banner, 0);
            t.edge(usage, 0);
            t.edge(banner, 1);
            return;
        }
        for (i, m) in GATEKEEPER_MAGIC.iter().enumerate() {
            if input.get(i) != Some(m) {
                t.edge(main, 5);
                t.edge(log_reject, 0);
                t.edge(log_reject, 1);
                return;
            }
            t.edge(main, 1 + i as u32);
        }
        let payload = &input[GATEKEEPER_MAGIC.len()..];
        t.edge(validate, 0);
        if payload.len() < 2 {
            t.edge(validate, 1);
            t.edge(log_reject, 0);
            t.edge(log_reject, 2);
            return;
        }
        let (body, last) = payload.split_at(payload.len() - 1);
        let sum = body.iter().fold(0u8, |acc, b| acc.wrapping_add(*b));
        if sum != last[0] {
            t.edge(validate, 2);
            t.edge(log_reject, 0);
            t.edge(log_reject, 2);
            return;
        }
        t.edge(validate, 3);
        t.edge(write, 0);
        t.oracle(deep);
        for _ in body {
            t.edge(write, 1);
        }
        if body[0] == 0xff {
            t.crash();
        }
        t.edge(write, 2);
    })
    .expect("gatekeeper definition is valid")
}

pub const HONEYPOT_GATES: [u8; 3] = [0xc3, 0x5a, 0x7e];
/// Bytes of text-mode input the honeypot subtree looks at.
const HONEYPOT_WINDOW: usize = 64;

/// Text-mode inputs feed a large safe subtree full of count-sensitive
/// branches; inputs starting with the first gate byte go down a narrow
/// three-gate path with one unsafe oracle behind each gate.
pub fn honeypot() -> TargetProgram {
    let mut b = TargetBuilder::new("honeypot");
    let main = b.function("main", 4);
    let parse_header = b.function("parse_header", 4);
    let parse_body = b.function("parse_body", 4);
    let parse_trailer = b.function("parse_trailer", 3);
    let copy_shallow = b.function("raw_copy_shallow", 2);
    let copy_mid = b.function("raw_copy_mid", 2);
    let copy_deep = b.function("raw_copy_deep", 2);

    let lex = b.function("lex", 3);
    let classes: Vec<FnIdx> = (0..16).map(|k| b.function(format!("lex_class_{k:x}"), 17)).collect();
    let pair_scan = b.function("pair_scan", 3);
    let pairs: Vec<FnIdx> = (0..8).map(|k| b.function(format!("pair_kind_{k}"), 4)).collect();
    let summarize = b.function("summarize", 7);
    let histogram = b.function("histogram", 9);
    let emit_report = b.function("emit_report", 3);
    let normalize = b.function("normalize", 6);

    b.call("main", "parse_header")
        .call("parse_header", "raw_copy_shallow")
        .call("parse_header", "parse_body")
        .call("parse_body", "raw_copy_mid")
        .call("parse_body", "parse_trailer")
        .call("parse_trailer", "raw_copy_deep")
        .call("main", "lex")
        .call("main", "pair_scan")
        .call("main", "summarize")
        .call("main", "normalize")
        .call("summarize", "histogram")
        .call("summarize", "emit_report");
    for k in 0..16 {
        b.call("lex", &format!("lex_class_{k:x}"));
    }
    for k in 0..8 {
        b.call("pair_scan", &format!("pair_kind_{k}"));
    }
    b.unsafe_fn("raw_copy_shallow")
        .unsafe_fn("raw_copy_mid")
        .unsafe_fn("raw_copy_deep")
        .seed(b"hello, world")
        .seed(b"GET /index.html HTTP/1.0")
        .seed(b"key=value;n=42")
        .seed(b"\x00\x10\x20\x30\x40\x50\x60\x70")
        .design_blocked_fraction(30.0 / 37.0);
    let shallow = b.oracle("shallow_unsafe", "raw_copy_shallow");
    let mid = b.oracle("mid_unsafe", "raw_copy_mid");
    let deep = b.oracle("deep_unsafe", "raw_copy_deep");

    b.build(move |input, t| {
        t.edge(main, 0);
        let Some(&first) = input.first() else {
            t.edge(main, 1);
            return;
        };
        if first != HONEYPOT_GATES[0] {
            t.edge(main, 2);
            let window = &input[..input.len().min(HONEYPOT_WINDOW)];

            t.edge(lex, 0);
            for &byte in window {
                t.edge(lex, 1);
                let class = classes[(byte >> 4) as usize];
                t.edge(class, 0);
                t.edge(class, 1 + u32::from(byte & 0x0f));
            }
            t.edge(lex, 2);

            t.edge(pair_scan, 0);
            for w in window.windows(2) {
                t.edge(pair_scan, 1);
                let kind = pairs[((w[0] ^ w[1]) & 7) as usize];
                t.edge(kind, 0);
                t.edge(kind, 1 + (w[0].cmp(&w[1]) as i32 + 1) as u32);
            }
            t.edge(pair_scan, 2);

            t.edge(summarize, 0);
            t.edge(
                summarize,
                match window.len() {
                    0..=7 => 1,
                    8..=15 => 2,
                    16..=31 => 3,
                    _ => 4,
                },
            );
            let sum: u32 = window.iter().map(|b| u32::from(*b)).sum();
            t.edge(summarize, if sum.is_multiple_of(2) { 5 } else { 6 });
            t.edge(histogram, 0);
            let distinct: BTreeSet<u8> = window.iter().map(|b| b >> 4).collect();
            t.edge(histogram, 1 + (distinct.len().min(15) / 2) as u32);
            if sum.is_multiple_of(3) {
                t.edge(emit_report, 0);
                t.edge(emit_report, if window.len() % 2 == 0 { 1 } else { 2 });
            }

            t.edge(normalize, 0);
            for &byte in window.iter().take(16) {
                let e = match byte {
                    b'a'..=b'z' => 1,
                    b'A'..=b'Z' => 2,
                    b'0'..=b'9' => 3,
                    b' ' | b'\t' | b'\n' | b'\r' => 4,
                    _ => 5,
                };
                t.edge(normalize, e);
            }
            return;
        }

        t.edge(main, 3);
        t.edge(parse_header, 0);
        t.edge(copy_shallow, 0);
        t.oracle(shallow);
        t.edge(copy_shallow, 1);
        match input.get(1) {
            None => {
                t.edge(parse_header, 1);
                return;
            }
            Some(&b) if b != HONEYPOT_GATES[1] => {
                t.edge(parse_header, 2);
                return;
            }
            Some(_) => t.edge(parse_header, 3),
        }

        t.edge(parse_body, 0);
        t.edge(copy_mid, 0);
        t.oracle(mid);
        t.edge(copy_mid, 1);
        match input.get(2) {
            None => {
                t.edge(parse_body, 1);
                return;
            }
            Some(&b) if b != HONEYPOT_GATES[2] => {
                t.edge(parse_body, 2);
                return;
            }
            Some(_) => t.edge(parse_body, 3),
        }

        t.edge(parse_trailer, 0);
        t.edge(copy_deep, 0);
        t.oracle(deep);
        t.edge(copy_deep, 1);
        if input.get(3) == Some(&0) {
            t.edge(parse_trailer, 1);
            t.crash();
        } else {
            t.edge(parse_trailer, 2);
        }
    })
    .expect("honeypot definition is valid")
}

/// Opcode byte followed by a per-opcode key. Key lengths (oracle depths).
pub const MULTI_ORACLE_KEYS: [&[u8]; 7] = [b"", b"k", b"q", b"zx", b"mw", b"vjp", b"rgb"];

/// Seven opcode handlers, each guarding one unsafe location behind a key of
/// varying length.
pub fn multi_oracle() -> TargetProgram {
    let mut b = TargetBuilder::new("multi_oracle");
    let main = b.function("main", 10);
    let trace_log = b.function("trace_log", 2);
    let checksum = b.function("checksum", 3);
    let stats = b.function("stats", 2);
    let mut handlers = Vec::new();
    let mut sinks = Vec::new();
    let mut oracles = Vec::new();
    for (k, key) in MULTI_ORACLE_KEYS.iter().enumerate() {
        let op = format!("op_{k}");
        let sink = format!("unsafe_op_{k}");
        handlers.push(b.function(op.as_str(), key.len() as u32 + 2));
        sinks.push(b.function(sink.as_str(), 1));
        b.call("main", &op).call(&op, &sink).call(&op, "trace_log").unsafe_fn(&sink);
        oracles.push(b.oracle(&format!("loc_{k}"), &sink));
    }
    b.call("main", "trace_log")
        .call("main", "checksum")
        .call("checksum", "stats")
        .seed(b"a")
        .seed(b"hello")
        .seed(b"0000")
        .design_blocked_fraction(3.0 / 18.0);

    b.build(move |input, t| {
        t.edge(main, 0);
        let Some(&opcode) = input.first() else {
            t.edge(main, 1);
            return;
        };
        let k = opcode.wrapping_sub(b'a') as usize;
        if k >= MULTI_ORACLE_KEYS.len() {
            t.edge(main, 9);
            t.edge(trace_log, 0);
            t.edge(checksum, 0);
            let sum = input.iter().fold(0u8, |a, b| a.wrapping_add(*b));
            t.edge(checksum, if sum & 1 == 0 { 1 } else { 2 });
            t.edge(stats, 0);
            t.edge(stats, 1);
            t.edge(trace_log, 1);
            return;
        }
        t.edge(main, 2 + k as u32);
        let key = MULTI_ORACLE_KEYS[k];
        let op = handlers[k];
        t.edge(op, 0);
        for (i, want) in key.iter().enumerate() {
            if input.get(1 + i) != Some(want) {
                t.edge(op, key.len() as u32 + 1);
                t.edge(trace_log, 0);
                t.edge(trace_log, 1);
                return;
            }
            t.edge(op, 1 + i as u32);
        }
        t.edge(sinks[k], 0);
        t.oracle(oracles[k]);
        if k == 6 && input.len() > 1 + key.len() && input[1 + key.len()] == b'!' {
            t.crash();
        }
    })
    .expect("multi_oracle definition is valid")
}
